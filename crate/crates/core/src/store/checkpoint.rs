//! Network checkpoint format.
//!
//! ```text
//! "CFNN" | version u32
//! architecture: in_channels height width kernel_h kernel_w u32
//!               conv count u32, widths u32... | hidden count u32, widths u32...
//!               outputs u32 | bn momentum f64 | bn eps f64 | input scale f64
//! layer list:   count u32, then per layer kind u8 and its shape as u32s
//! parameter count u64 | parameters f64, layer by layer
//!     (conv/linear: weight, bias; batch norm: gamma, shift, running mean, running var)
//! ```

use std::path::Path;

use super::bytes::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::neuralnet::{ArchSpec, Layer, Network, Real};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CFNN";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_DIM: u32 = 1 << 24;

const KIND_CONV: u8 = 0;
const KIND_NORM: u8 = 1;
const KIND_RELU: u8 = 2;
const KIND_FLATTEN: u8 = 3;
const KIND_LINEAR: u8 = 4;

fn layer_shape<T>(layer: &Layer<T>) -> (u8, Vec<usize>) {
    match layer {
        Layer::Conv(c) => (
            KIND_CONV,
            vec![
                c.in_channels,
                c.out_channels,
                c.kernel_h,
                c.kernel_w,
                c.stride,
                c.padding.top,
                c.padding.bottom,
                c.padding.left,
                c.padding.right,
            ],
        ),
        Layer::Norm(n) => (KIND_NORM, vec![n.features]),
        Layer::Relu { .. } => (KIND_RELU, vec![]),
        Layer::Flatten {
            channels,
            height,
            width,
        } => (KIND_FLATTEN, vec![*channels, *height, *width]),
        Layer::Linear(l) => (KIND_LINEAR, vec![l.inputs, l.outputs]),
    }
}

fn layer_tensors<T>(layer: &Layer<T>) -> Vec<&[T]> {
    match layer {
        Layer::Conv(c) => vec![&c.weight, &c.bias],
        Layer::Norm(n) => vec![&n.gamma, &n.shift, &n.running_mean, &n.running_var],
        Layer::Linear(l) => vec![&l.weight, &l.bias],
        Layer::Relu { .. } | Layer::Flatten { .. } => vec![],
    }
}

fn layer_tensors_mut<T>(layer: &mut Layer<T>) -> Vec<&mut Vec<T>> {
    match layer {
        Layer::Conv(c) => vec![&mut c.weight, &mut c.bias],
        Layer::Norm(n) => vec![&mut n.gamma, &mut n.shift, &mut n.running_mean, &mut n.running_var],
        Layer::Linear(l) => vec![&mut l.weight, &mut l.bias],
        Layer::Relu { .. } | Layer::Flatten { .. } => vec![],
    }
}

pub fn encode_checkpoint<T: Real>(net: &Network<T>) -> Result<Vec<u8>> {
    let a = &net.arch;
    let mut e = Encoder::default();
    e.bytes(&CHECKPOINT_MAGIC);
    e.u32(CHECKPOINT_VERSION);
    for d in [a.in_channels, a.height, a.width, a.kernel_h, a.kernel_w] {
        e.len_u32(d)?;
    }
    for widths in [&a.conv_widths, &a.hidden_widths] {
        e.len_u32(widths.len())?;
        for &w in widths.iter() {
            e.len_u32(w)?;
        }
    }
    e.len_u32(a.outputs)?;
    e.f64(a.bn_momentum);
    e.f64(a.bn_eps);
    e.f64(net.input_scale);
    e.len_u32(net.layers.len())?;
    for layer in &net.layers {
        let (kind, dims) = layer_shape(layer);
        e.u8(kind);
        for d in dims {
            e.len_u32(d)?;
        }
    }
    let count: usize = net.layers.iter().flat_map(layer_tensors).map(|t| t.len()).sum();
    e.u64(count as u64);
    for t in net.layers.iter().flat_map(layer_tensors) {
        for v in t {
            e.f64(v.f64());
        }
    }
    Ok(e.buf)
}

fn incompatible_or_format(expected: Option<&ArchSpec>, found: &ArchSpec) -> Result<()> {
    if let Some(exp) = expected {
        if exp != found {
            return Err(Error::Incompatible(format!(
                "checkpoint holds a {}x{}x{} -> {} network, expected {}x{}x{} -> {}{}",
                found.in_channels,
                found.height,
                found.width,
                found.outputs,
                exp.in_channels,
                exp.height,
                exp.width,
                exp.outputs,
                if (exp.in_channels, exp.height, exp.width, exp.outputs)
                    == (found.in_channels, found.height, found.width, found.outputs)
                {
                    " (layer widths or hyper-parameters differ)"
                } else {
                    ""
                }
            )));
        }
    }
    Ok(())
}

/// Decodes a checkpoint; with `expected` set, a different architecture is an
/// [`Error::Incompatible`].
pub fn decode_checkpoint<T: Real>(buf: &[u8], expected: Option<&ArchSpec>) -> Result<Network<T>> {
    let mut d = Decoder::new(buf, 0);
    if d.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad magic, not a checkpoint"));
    }
    let version = d.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let in_channels = d.dim("in_channels", MAX_DIM)?;
    let height = d.dim("height", MAX_DIM)?;
    let width = d.dim("width", MAX_DIM)?;
    let kernel_h = d.dim("kernel_h", MAX_DIM)?;
    let kernel_w = d.dim("kernel_w", MAX_DIM)?;
    let mut widths = |what: &str| -> Result<Vec<usize>> {
        let at = d.offset();
        let n = d.u32(what)?;
        if n > 64 {
            return Err(Error::format(at, format!("{n} {what} layers is implausible")));
        }
        (0..n).map(|_| d.dim(what, MAX_DIM)).collect()
    };
    let conv_widths = widths("conv")?;
    let hidden_widths = widths("hidden")?;
    let outputs = d.dim("outputs", MAX_DIM)?;
    let bn_momentum = d.f64("bn momentum")?;
    let bn_eps = d.f64("bn eps")?;
    let scale_at = d.offset();
    let input_scale = d.f64("input scale")?;
    if !(input_scale > 0.0 && input_scale.is_finite()) {
        return Err(Error::format(scale_at, format!("input scale {input_scale} must be positive")));
    }
    let arch = ArchSpec {
        in_channels,
        height,
        width,
        kernel_h,
        kernel_w,
        conv_widths,
        hidden_widths,
        outputs,
        bn_momentum,
        bn_eps,
    };
    incompatible_or_format(expected, &arch)?;
    let mut net = Network::<T>::new(arch).map_err(|e| Error::format(8, format!("architecture: {e}")))?;
    net.input_scale = input_scale;

    let list_at = d.offset();
    let count = d.u32("layer count")? as usize;
    if count != net.layers.len() {
        return Err(Error::format(
            list_at,
            format!("layer list has {count} entries, architecture implies {}", net.layers.len()),
        ));
    }
    for (i, layer) in net.layers.iter().enumerate() {
        let at = d.offset();
        let (kind, dims) = layer_shape(layer);
        let found_kind = d.u8("layer kind")?;
        let found: Vec<usize> = (0..dims.len())
            .map(|_| d.u32("layer dim").map(|v| v as usize))
            .collect::<Result<_>>()?;
        if found_kind != kind || found != dims {
            return Err(Error::format(
                at,
                format!("layer {i} is kind {found_kind} {found:?}, architecture implies kind {kind} {dims:?}"),
            ));
        }
    }
    let count_at = d.offset();
    let stored = d.u64("parameter count")?;
    let needed: usize = net.layers.iter().flat_map(layer_tensors).map(|t| t.len()).sum();
    if stored != needed as u64 {
        return Err(Error::format(
            count_at,
            format!("{stored} stored values, architecture needs {needed}"),
        ));
    }
    for layer in &mut net.layers {
        for t in layer_tensors_mut(layer) {
            for v in t.iter_mut() {
                *v = T::of(d.f64("parameter")?);
            }
        }
    }
    if d.remaining() != 0 {
        return Err(Error::format(d.offset(), format!("{} trailing bytes", d.remaining())));
    }
    Ok(net)
}

pub fn save_checkpoint<T: Real>(net: &Network<T>, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(net)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: &Path, expected: Option<&ArchSpec>) -> Result<Network<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, expected)
}
