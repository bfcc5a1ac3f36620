//! BNIR files written by an independent producer, byte by byte.

use bnfi::activation::ActivationFn;
use bnfi::engine::{forward, Mode, Tensor};
use bnfi::ir::format::{self, FormatError};
use bnfi::ir::{Node, PoolKind, Shape};
use serde_json::{json, Value};

struct Blobs(Vec<u8>);

impl Blobs {
    fn push(&mut self, values: &[f32]) -> Value {
        let offset = self.0.len();
        for v in values {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
        json!({ "offset": offset, "len": values.len() })
    }
}

fn container(version: u32, header: &Value, blobs: &[u8]) -> Vec<u8> {
    let header = serde_json::to_vec(header).unwrap();
    let mut out = b"BNIR".to_vec();
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(blobs);
    out
}

/// conv(1→2, 3×3, pad 1, bias) → BN → ReLU → max-pool 2 → flatten → linear(8→3).
fn exported() -> (Value, Vec<u8>) {
    let mut b = Blobs(Vec::new());
    let conv_w: Vec<f32> = (0..18).map(|i| (i as f32 - 9.0) / 8.0).collect();
    let conv_b = b.push(&[0.25, -0.5]);
    let conv_w = b.push(&conv_w);
    let gamma = b.push(&[1.5, -0.75]);
    let beta = b.push(&[0.1, 0.2]);
    let mean = b.push(&[0.0, 1.0]);
    let var = b.push(&[1.0, 4.0]);
    let lin_w: Vec<f32> = (0..24).map(|i| ((i * 7) % 5) as f32 - 2.0).collect();
    let lin_w = b.push(&lin_w);
    let header = json!({
        "name": "exported",
        "model_version": 3,
        "input_shape": [1, 4, 4],
        "nodes": [
            { "op": "conv2d", "out_ch": 2, "in_ch": 1, "kernel": 3, "stride": 1, "padding": 1, "groups": 1, "weights": conv_w, "bias": conv_b },
            { "op": "batch_norm", "channels": 2, "eps": 0.001, "gamma": gamma, "beta": beta, "running_mean": mean, "running_var": var },
            { "op": "activation", "function": { "kind": "relu" } },
            { "op": "pool", "kind": "max", "kernel": 2, "stride": 2 },
            { "op": "flatten" },
            { "op": "linear", "out_features": 3, "in_features": 8, "weights": lin_w, "bias": null }
        ],
        "blob_bytes": b.0.len()
    });
    (header, b.0)
}

#[test]
fn externally_written_file_loads() {
    let (header, blobs) = exported();
    let net = format::from_bytes(&container(1, &header, &blobs)).unwrap();
    assert_eq!(net.name, "exported");
    assert_eq!(net.version, 3);
    assert_eq!(net.nodes.len(), 6);
    let conv = net.nodes[0].as_conv().unwrap();
    assert_eq!(conv.bias.as_deref(), Some(&[0.25, -0.5][..]));
    assert_eq!(conv.weights[0], -9.0 / 8.0);
    let bn = net.nodes[1].as_bn().unwrap();
    assert_eq!(bn.eps, 0.001);
    assert_eq!(bn.running_var, vec![1.0, 4.0]);
    assert_eq!(net.nodes[2], Node::Activation(ActivationFn::Relu));
    assert_eq!(net.nodes[3], Node::Pool { kind: PoolKind::Max, kernel: 2, stride: 2 });
    assert!(net.nodes[5].as_linear().unwrap().bias.is_none());
    let x = Tensor::new(1, Shape::Spatial { c: 1, h: 4, w: 4 }, (0..16).map(|i| i as f64 / 4.0).collect()).unwrap();
    assert_eq!(forward(&net, &x, Mode::Eval).unwrap().data.len(), 3);
}

#[test]
fn leaky_relu_defaults_its_slope() {
    let (mut header, blobs) = exported();
    header["nodes"][2]["function"] = json!({ "kind": "leaky_relu" });
    let net = format::from_bytes(&container(1, &header, &blobs)).unwrap();
    assert_eq!(net.nodes[2], Node::Activation(ActivationFn::leaky_relu(0.01)));
}

#[test]
fn corruption_classes_have_distinct_errors() {
    let (header, blobs) = exported();
    let good = container(1, &header, &blobs);

    let mut magic = good.clone();
    magic[..4].copy_from_slice(b"ONNX");
    assert!(matches!(format::from_bytes(&magic), Err(FormatError::BadMagic)));

    assert!(matches!(format::from_bytes(&container(99, &header, &blobs)), Err(FormatError::UnsupportedVersion(99))));

    assert!(matches!(format::from_bytes(&good[..good.len() - 4]), Err(FormatError::Truncated(_))));
    assert!(matches!(format::from_bytes(&good[..10]), Err(FormatError::Truncated(_))));

    let mut invalid = header.clone();
    invalid["nodes"][5]["in_features"] = json!(7);
    assert!(matches!(format::from_bytes(&container(1, &invalid, &blobs)), Err(FormatError::Invalid(_))));

    let mut unknown = header.clone();
    unknown["nodes"][4]["op"] = json!("attention");
    assert!(matches!(format::from_bytes(&container(1, &unknown, &blobs)), Err(FormatError::Header(_))));
}

#[test]
fn blob_references_are_bounds_checked() {
    let (mut header, blobs) = exported();
    header["nodes"][0]["weights"]["offset"] = json!(blobs.len());
    assert!(matches!(format::from_bytes(&container(1, &header, &blobs)), Err(FormatError::Truncated(_))));
    let (mut header, blobs) = exported();
    header["nodes"][0]["weights"]["len"] = json!(u64::MAX);
    assert!(format::from_bytes(&container(1, &header, &blobs)).is_err());
}

#[test]
fn absurd_dimensions_are_rejected_without_panicking() {
    for (node, field) in [(0, "out_ch"), (0, "kernel"), (0, "groups"), (3, "kernel"), (5, "in_features")] {
        for value in [0u64, 1 << 40, u64::MAX] {
            let (mut header, blobs) = exported();
            header["nodes"][node][field] = json!(value);
            assert!(format::from_bytes(&container(1, &header, &blobs)).is_err(), "{field} = {value}");
        }
    }
    let (mut header, blobs) = exported();
    header["input_shape"] = json!([u64::MAX, u64::MAX, 2]);
    assert!(format::from_bytes(&container(1, &header, &blobs)).is_err());
}

#[test]
fn written_files_use_the_same_layout() {
    let (header, blobs) = exported();
    let net = format::from_bytes(&container(1, &header, &blobs)).unwrap();
    let bytes = format::to_bytes(&net).unwrap();
    assert_eq!(&bytes[..4], b"BNIR");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let parsed: Value = serde_json::from_slice(&bytes[12..12 + len]).unwrap();
    let blob_bytes = parsed["blob_bytes"].as_u64().unwrap() as usize;
    assert_eq!(bytes.len(), 12 + len + blob_bytes);
    // first blob is the conv weights, at the start of the blob section
    let w = &parsed["nodes"][0]["weights"];
    assert_eq!(w["offset"], 0);
    assert_eq!(w["len"], 18);
    let first = f32::from_le_bytes(bytes[12 + len..16 + len].try_into().unwrap());
    assert_eq!(first, -9.0 / 8.0);
}

#[test]
fn huge_but_consistent_shapes_do_not_overflow_counts() {
    let (mut header, blobs) = exported();
    header["input_shape"] = json!([1, 1u64 << 31, 1u64 << 31]);
    header["nodes"] = json!([header["nodes"][0], header["nodes"][1], header["nodes"][2]]);
    let net = format::from_bytes(&container(1, &header, &blobs)).unwrap();
    assert!(bnfi::ir::count_flops(&net).conv > 0);
}
