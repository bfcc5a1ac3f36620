use std::fmt::Write as _;
use std::path::Path;

use bnfi::criteria::Criterion;
use bnfi::engine::{self, Dataset, Split, SyntheticDatasetCfg, TrainCfg};
use bnfi::ir::{self, format, prunable_units, Complexity, NetworkIR, Node};
use bnfi::pruner::{apply_plan, make_plan, score_units, PruningPlan, RatioVector};
use bnfi::search::{search_all_ratios, sweep, SearchCfg};
use serde_json::json;

use crate::args::*;
use crate::error::CliError;
use crate::output::{emit, stdout, write_atomic};

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Score(a) => score(a),
        Command::Prune(a) => prune(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Search(a) => search(a),
        Command::Eval(a) => eval(a),
        Command::TrainToy(a) => train_toy(a),
        Command::Inspect(a) => inspect(a),
        Command::GaussCheck(a) => gauss_check(a),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path.display().to_string(), e))
}

fn load_model(path: &Path) -> Result<NetworkIR, CliError> {
    format::from_bytes(&read(path)?).map_err(|e| CliError::Model(format!("{}: {e}", path.display())))
}

fn load_data(path: &Path) -> Result<Dataset, CliError> {
    Dataset::from_bytes(&read(path)?).map_err(|e| CliError::Model(format!("{}: {e}", path.display())))
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_slice(&read(path)?).map_err(|e| CliError::Model(format!("{}: {e}", path.display())))
}

fn score(a: ScoreArgs) -> Result<(), CliError> {
    let quad = a.quad.config()?;
    let net = load_model(&a.model)?;
    let scored = score_units(&net, a.criterion.reseeded(a.seed), &quad)?;
    let mut csv = String::from("unit,node,channel,score\n");
    for (u, (unit, iv)) in scored.iter().enumerate() {
        for (c, s) in iv.scores.iter().enumerate() {
            writeln!(csv, "{u},{},{c},{}", unit.conv_index, a.out.precision.format(*s)).expect("string write");
        }
    }
    stdout(&csv)
}

fn prune(a: PruneArgs) -> Result<(), CliError> {
    let quad = a.quad.config()?;
    let net = load_model(&a.model)?;
    let criterion = a.criterion.reseeded(a.seed);
    let plan = if let Some(path) = &a.plan {
        let plan: PruningPlan = load_json(path)?;
        PruningPlan::new(&net, plan.entries)?
    } else {
        let units = prunable_units(&net).len();
        let ratios = match (a.ratio, a.ratios, &a.ratio_file) {
            (Some(r), _, _) => RatioVector::uniform(r, units)?,
            (_, Some(rs), _) => RatioVector::new(rs)?,
            (_, _, Some(path)) => RatioVector::new(load_json::<Vec<f64>>(path)?)?,
            _ => unreachable!("clap requires one amount argument"),
        };
        make_plan(&net, criterion, &ratios, a.order, &quad)?
    };
    let pruned = apply_plan(&net, &plan)?;
    let bytes = format::to_bytes(&pruned)?;
    if let Some(path) = &a.plan_output {
        let text = serde_json::to_string_pretty(&plan).expect("plan serializes");
        write_atomic(path, format!("{text}\n").as_bytes())?;
    }
    write_atomic(&a.output, &bytes)?;
    let (before, after) = (ir::complexity(&net), ir::complexity(&pruned));
    eprintln!(
        "removed {} channels; params {} -> {}; flops {} -> {}",
        plan.removed_channels(),
        before.total_params,
        after.total_params,
        before.total_flops,
        after.total_flops
    );
    Ok(())
}

fn run_sweep(a: SweepArgs) -> Result<(), CliError> {
    let quad = a.quad.config()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    let net = load_model(&a.model)?;
    let data = load_data(&a.data)?;
    let criteria: Vec<Criterion> = a.criteria.iter().map(|c| c.reseeded(a.seed)).collect();
    let report = pool.install(|| sweep(&net, &criteria, &a.orders, &a.ratios.0, &data, &quad))?;
    eprintln!("baseline accuracy {}", a.out.precision.format(report.baseline));
    emit(a.output.as_deref(), &report.to_csv(a.out.precision))
}

fn search(a: SearchArgs) -> Result<(), CliError> {
    let quad = a.quad.config()?;
    let cfg = SearchCfg {
        delta: a.delta,
        unit_deltas: a.unit_deltas,
        iterations: a.iterations,
        lower: a.lower,
        upper: a.upper,
        eval_split: Split::Train,
        cumulative: a.cumulative,
    };
    cfg.validate()?;
    let net = load_model(&a.model)?;
    let data = load_data(&a.data)?;
    if let Some(d) = &cfg.unit_deltas {
        let units = prunable_units(&net).len();
        if d.len() != units {
            return Err(CliError::Usage(format!("--unit-deltas has {} values for {units} units", d.len())));
        }
    }
    let mut evaluator = |n: &NetworkIR| engine::accuracy(n, &data);
    let ratios = search_all_ratios(&net, a.criterion.reseeded(a.seed), &cfg, &quad, &mut evaluator)?;
    let text = serde_json::to_string_pretty(&ratios).expect("ratios serialize");
    emit(a.output.as_deref(), &format!("{text}\n"))
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let net = load_model(&a.model)?;
    let data = load_data(&a.data)?;
    let acc = engine::accuracy(&net, &data)?;
    let Complexity { conv_params, total_params, conv_flops, total_flops } = ir::complexity(&net);
    stdout(&format!(
        "accuracy,params,conv_params,flops,conv_flops\n{},{total_params},{conv_params},{total_flops},{conv_flops}\n",
        a.out.precision.format(acc)
    ))
}

fn train_toy(a: TrainToyArgs) -> Result<(), CliError> {
    let [w0, w1] = a.widths[..] else {
        return Err(CliError::Usage(format!("--widths needs two values, got {}", a.widths.len())));
    };
    if [w0, w1, a.classes, a.samples_per_class, a.image_size, a.channels].contains(&0) {
        return Err(CliError::Usage("widths, classes, samples, image size and channels must be positive".into()));
    }
    if !a.noise.is_finite() || a.noise < 0.0 {
        return Err(CliError::Usage(format!("noise must be finite and >= 0, got {}", a.noise)));
    }
    let train_cfg = TrainCfg {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed: a.seed,
        ..TrainCfg::default()
    };
    train_cfg.validate()?;
    let data_cfg = SyntheticDatasetCfg {
        num_classes: a.classes,
        samples_per_class: a.samples_per_class,
        image_size: a.image_size,
        channels: a.channels,
        noise_std: a.noise,
        seed: a.data_seed,
    };
    let arch = engine::toy_architecture([a.channels, a.image_size, a.image_size], [w0, w1], a.classes);
    let data = data_cfg.generate(Split::Train);
    let init = engine::initialize(&arch, a.seed)?;
    let trained = engine::train(&init, &data, &train_cfg)?;
    let model_bytes = format::to_bytes(&trained.net)?;

    let val = a.val_output.as_ref().map(|_| data_cfg.generate(Split::Validation));
    write_atomic(&a.output, &model_bytes)?;
    write_atomic(&a.data_output, &data.to_bytes())?;
    if let (Some(path), Some(v)) = (&a.val_output, &val) {
        write_atomic(path, &v.to_bytes())?;
    }
    if let Some(last) = trained.history.last() {
        eprintln!("final epoch: loss {:.4}, train accuracy {:.4}", last.loss, last.train_accuracy);
    }
    if let Some(v) = &val {
        eprintln!("validation accuracy {:.4}", engine::accuracy(&trained.net, v)?);
    }
    Ok(())
}

fn shape_text(s: Option<ir::Shape>) -> String {
    s.map_or_else(|| "?".into(), |s| format!("{:?}", s.dims()))
}

fn inspect(a: InspectArgs) -> Result<(), CliError> {
    let net = load_model(&a.model)?;
    let shapes = net.shapes();
    let units = prunable_units(&net);
    let c = ir::complexity(&net);
    if a.json {
        let nodes: Vec<_> = net
            .nodes
            .iter()
            .zip(&shapes)
            .enumerate()
            .map(|(i, (n, s))| json!({ "index": i, "kind": n.kind_name(), "output": s.map(|s| s.dims()) }))
            .collect();
        let doc = json!({
            "name": net.name,
            "input": net.input_shape,
            "nodes": nodes,
            "units": units,
            "complexity": c,
        });
        return stdout(&format!("{}\n", serde_json::to_string_pretty(&doc).expect("json")));
    }
    let mut out = String::new();
    writeln!(out, "{} input {:?}", net.name, net.input_shape).expect("string write");
    for (i, (n, s)) in net.nodes.iter().zip(&shapes).enumerate() {
        let detail = match n {
            Node::Conv2d(c) => format!(" {}->{} k{} s{} p{} g{}", c.in_ch, c.out_ch, c.kernel, c.stride, c.padding, c.groups),
            Node::Linear(l) => format!(" {}->{}", l.in_features, l.out_features),
            _ => String::new(),
        };
        writeln!(out, "{i:>4} {}{detail} -> {}", n.kind_name(), shape_text(*s)).expect("string write");
    }
    writeln!(out, "prunable units: {}", units.len()).expect("string write");
    for (u, unit) in units.iter().enumerate() {
        let ch = net.nodes[unit.conv_index].as_conv().map_or(0, |c| c.out_ch);
        writeln!(
            out,
            "  unit {u}: conv {} bn {} act {}, {ch} channels, {} consumers",
            unit.conv_index,
            unit.bn_index,
            unit.act_index,
            unit.consumers.len()
        )
        .expect("string write");
    }
    writeln!(out, "params {} (conv {})", c.total_params, c.conv_params).expect("string write");
    writeln!(out, "flops {} (conv {})", c.total_flops, c.conv_flops).expect("string write");
    stdout(&out)
}

fn gauss_check(a: GaussCheckArgs) -> Result<(), CliError> {
    let net = load_model(&a.model)?;
    let layer = match a.layer {
        Some(l) => l,
        None => net
            .nodes
            .iter()
            .position(|n| matches!(n, Node::BatchNorm(_)))
            .ok_or_else(|| CliError::Usage("model has no batch norm".into()))?,
    };
    let data = load_data(&a.data)?;
    let rows = engine::gaussianity_report(&net, &data, layer, &a.batch_sizes, a.seed)?;
    let mut csv = String::from("batch_size,samples,mse\n");
    for r in rows {
        writeln!(csv, "{},{},{}", r.batch_size, r.samples, a.out.precision.format(r.mse)).expect("string write");
    }
    stdout(&csv)
}
