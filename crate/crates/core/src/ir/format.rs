//! The BNIR model file.
//!
//! ```text
//! "BNIR" | u32 version (=1) | u32 header_len | header (UTF-8 JSON) | f32 blobs
//! ```
//!
//! All integers and floats are little-endian. The header lists the nodes in
//! order; every tensor is a `{offset, len}` reference into the blob section
//! (byte offset, element count). Blobs are written in header order.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{validate, BatchNorm, Conv2d, Linear, NetworkIR, Node, PoolKind, Violation};
use crate::activation::ActivationFn;
use crate::container::{self, BlobReader, BlobRef, BlobWriter, ContainerError};

pub const MAGIC: &[u8; 4] = b"BNIR";
pub const VERSION: u32 = container::SUPPORTED_VERSION;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: not a BNIR file")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated: {0}")]
    Truncated(String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("network fails validation: {}", join(.0))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl From<ContainerError> for FormatError {
    fn from(e: ContainerError) -> Self {
        match e {
            ContainerError::BadMagic { .. } => FormatError::BadMagic,
            ContainerError::UnsupportedVersion(v) => FormatError::UnsupportedVersion(v),
            ContainerError::Truncated(m) => FormatError::Truncated(m),
            ContainerError::Header(m) => FormatError::Header(m),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    name: String,
    model_version: u32,
    input_shape: Vec<usize>,
    nodes: Vec<NodeHeader>,
    blob_bytes: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum NodeHeader {
    Conv2d {
        out_ch: usize,
        in_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        weights: BlobRef,
        bias: Option<BlobRef>,
    },
    BatchNorm {
        channels: usize,
        eps: f64,
        gamma: BlobRef,
        beta: BlobRef,
        running_mean: BlobRef,
        running_var: BlobRef,
    },
    Activation {
        function: ActivationFn,
    },
    Pool {
        kind: PoolKind,
        kernel: usize,
        stride: usize,
    },
    GlobalAvgPool,
    Flatten,
    Linear {
        out_features: usize,
        in_features: usize,
        weights: BlobRef,
        bias: Option<BlobRef>,
    },
    ResidualBegin,
    ResidualEnd,
}

/// Serializes a network that passes [`validate`].
pub fn to_bytes(net: &NetworkIR) -> Result<Vec<u8>, FormatError> {
    validate(net).map_err(FormatError::Invalid)?;
    let mut blobs = BlobWriter::default();
    let nodes = net
        .nodes
        .iter()
        .map(|node| match node {
            Node::Conv2d(c) => NodeHeader::Conv2d {
                out_ch: c.out_ch,
                in_ch: c.in_ch,
                kernel: c.kernel,
                stride: c.stride,
                padding: c.padding,
                groups: c.groups,
                weights: blobs.push_f32(&c.weights),
                bias: c.bias.as_deref().map(|b| blobs.push_f32(b)),
            },
            Node::BatchNorm(bn) => NodeHeader::BatchNorm {
                channels: bn.len(),
                eps: bn.eps,
                gamma: blobs.push_f32(&bn.gamma),
                beta: blobs.push_f32(&bn.beta),
                running_mean: blobs.push_f32(&bn.running_mean),
                running_var: blobs.push_f32(&bn.running_var),
            },
            Node::Activation(f) => NodeHeader::Activation { function: *f },
            Node::Pool { kind, kernel, stride } => NodeHeader::Pool { kind: *kind, kernel: *kernel, stride: *stride },
            Node::GlobalAvgPool => NodeHeader::GlobalAvgPool,
            Node::Flatten => NodeHeader::Flatten,
            Node::Linear(l) => NodeHeader::Linear {
                out_features: l.out_features,
                in_features: l.in_features,
                weights: blobs.push_f32(&l.weights),
                bias: l.bias.as_deref().map(|b| blobs.push_f32(b)),
            },
            Node::ResidualBegin => NodeHeader::ResidualBegin,
            Node::ResidualEnd => NodeHeader::ResidualEnd,
        })
        .collect();
    let blob_bytes = blobs.into_bytes();
    let header = Header {
        name: net.name.clone(),
        model_version: net.version,
        input_shape: net.input_shape.clone(),
        nodes,
        blob_bytes: blob_bytes.len() as u64,
    };
    let header = serde_json::to_vec_pretty(&header).map_err(|e| FormatError::Header(e.to_string()))?;
    Ok(container::encode(MAGIC, &header, &blob_bytes))
}

/// Parses and validates a BNIR image.
pub fn from_bytes(bytes: &[u8]) -> Result<NetworkIR, FormatError> {
    let (header, blobs) = container::decode(MAGIC, bytes)?;
    let header: Header = serde_json::from_slice(header).map_err(|e| FormatError::Header(e.to_string()))?;
    if (blobs.len() as u64) < header.blob_bytes {
        return Err(FormatError::Truncated(format!(
            "blob section has {} bytes, header declares {}",
            blobs.len(),
            header.blob_bytes
        )));
    }
    if (blobs.len() as u64) > header.blob_bytes {
        return Err(FormatError::Header(format!(
            "{} trailing bytes after blob section",
            blobs.len() as u64 - header.blob_bytes
        )));
    }
    let nodes = header
        .nodes
        .into_iter()
        .enumerate()
        .map(|(i, n)| decode_node(i, n, &blobs))
        .collect::<Result<Vec<_>, _>>()?;
    let net = NetworkIR {
        name: header.name,
        version: header.model_version,
        input_shape: header.input_shape,
        nodes,
    };
    validate(&net).map_err(FormatError::Invalid)?;
    Ok(net)
}

fn decode_node(i: usize, n: NodeHeader, blobs: &BlobReader<'_>) -> Result<Node, FormatError> {
    let tag = |field: &str| format!("node {i} {field}");
    Ok(match n {
        NodeHeader::Conv2d { out_ch, in_ch, kernel, stride, padding, groups, weights, bias } => Node::Conv2d(Conv2d {
            out_ch,
            in_ch,
            kernel,
            stride,
            padding,
            groups,
            weights: blobs.f32s(weights, &tag("weights"))?,
            bias: bias.map(|b| blobs.f32s(b, &tag("bias"))).transpose()?,
        }),
        NodeHeader::BatchNorm { channels, eps, gamma, beta, running_mean, running_var } => {
            let bn = BatchNorm {
                gamma: blobs.f32s(gamma, &tag("gamma"))?,
                beta: blobs.f32s(beta, &tag("beta"))?,
                running_mean: blobs.f32s(running_mean, &tag("running_mean"))?,
                running_var: blobs.f32s(running_var, &tag("running_var"))?,
                eps,
            };
            if bn.len() != channels {
                return Err(FormatError::Header(format!("node {i}: channels {channels} != gamma length {}", bn.len())));
            }
            Node::BatchNorm(bn)
        }
        NodeHeader::Activation { function } => Node::Activation(function),
        NodeHeader::Pool { kind, kernel, stride } => Node::Pool { kind, kernel, stride },
        NodeHeader::GlobalAvgPool => Node::GlobalAvgPool,
        NodeHeader::Flatten => Node::Flatten,
        NodeHeader::Linear { out_features, in_features, weights, bias } => Node::Linear(Linear {
            out_features,
            in_features,
            weights: blobs.f32s(weights, &tag("weights"))?,
            bias: bias.map(|b| blobs.f32s(b, &tag("bias"))).transpose()?,
        }),
        NodeHeader::ResidualBegin => Node::ResidualBegin,
        NodeHeader::ResidualEnd => Node::ResidualEnd,
    })
}

pub fn save(net: &NetworkIR, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let bytes = to_bytes(net)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<NetworkIR, FormatError> {
    from_bytes(&fs::read(path)?)
}
