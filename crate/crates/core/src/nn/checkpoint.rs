//! Binary checkpoint format (little-endian):
//!
//! ```text
//! "CDML" | version u16 | layer count u16
//! per layer: kind tag u8 | hyperparameters | parameter tensors
//!   tensor: rank u8 | extents u32 x rank | data f32 x numel
//! CRC32 (IEEE) of every preceding byte, u32
//! ```

use std::path::Path;

use super::{LayerSpec, NetworkModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CDML";
pub const CHECKPOINT_VERSION: u16 = 1;

mod tag {
    pub const INPUT: u8 = 0;
    pub const RESHAPE: u8 = 1;
    pub const TRANSPOSE: u8 = 2;
    pub const CONV1D: u8 = 3;
    pub const CONV2D: u8 = 4;
    pub const MAXPOOL1D: u8 = 5;
    pub const MAXPOOL2D: u8 = 6;
    pub const FLATTEN: u8 = 7;
    pub const DENSE: u8 = 8;
    pub const RELU: u8 = 9;
    pub const SIGMOID: u8 = 10;
    pub const SOFTMAX: u8 = 11;
    pub const DROPOUT: u8 = 12;
    pub const L2NORM: u8 = 13;
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(u32::try_from(v).expect("extent fits u32")).to_le_bytes());
}

fn put_shape(out: &mut Vec<u8>, shape: &[usize]) {
    out.push(u8::try_from(shape.len()).expect("rank fits u8"));
    for &e in shape {
        put_u32(out, e);
    }
}

pub fn write_checkpoint<T: Scalar>(model: &NetworkModel<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let count = u16::try_from(model.specs().len()).expect("layer count fits u16");
    out.extend_from_slice(&count.to_le_bytes());
    for (spec, params) in model.specs().iter().zip(model.params()) {
        match spec {
            LayerSpec::Input { shape } => {
                out.push(tag::INPUT);
                put_shape(&mut out, shape);
            }
            LayerSpec::Reshape { shape } => {
                out.push(tag::RESHAPE);
                put_shape(&mut out, shape);
            }
            LayerSpec::Transpose => out.push(tag::TRANSPOSE),
            LayerSpec::Conv1d {
                in_channels,
                filters,
                kernel,
            }
            | LayerSpec::Conv2d {
                in_channels,
                filters,
                kernel,
            } => {
                out.push(if matches!(spec, LayerSpec::Conv1d { .. }) {
                    tag::CONV1D
                } else {
                    tag::CONV2D
                });
                put_u32(&mut out, *in_channels);
                put_u32(&mut out, *filters);
                put_u32(&mut out, *kernel);
            }
            LayerSpec::MaxPool1d { pool } => {
                out.push(tag::MAXPOOL1D);
                put_u32(&mut out, *pool);
            }
            LayerSpec::MaxPool2d { pool } => {
                out.push(tag::MAXPOOL2D);
                put_u32(&mut out, *pool);
            }
            LayerSpec::Flatten => out.push(tag::FLATTEN),
            LayerSpec::Dense { inputs, units } => {
                out.push(tag::DENSE);
                put_u32(&mut out, *inputs);
                put_u32(&mut out, *units);
            }
            LayerSpec::Relu => out.push(tag::RELU),
            LayerSpec::Sigmoid => out.push(tag::SIGMOID),
            LayerSpec::Softmax => out.push(tag::SOFTMAX),
            LayerSpec::Dropout { p } => {
                out.push(tag::DROPOUT);
                out.extend_from_slice(&p.to_le_bytes());
            }
            LayerSpec::L2Normalize => out.push(tag::L2NORM),
        }
        for t in params {
            put_shape(&mut out, t.shape());
            for v in t.data() {
                out.extend_from_slice(&(v.to_f32().unwrap_or(f32::NAN)).to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.buf.len(),
                msg: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        Ok(self.u32(what)? as usize)
    }

    fn shape(&mut self, what: &str) -> Result<Vec<usize>> {
        let rank = self.u8(what)? as usize;
        (0..rank).map(|_| self.usize(what)).collect()
    }
}

pub fn read_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<NetworkModel<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "bad magic bytes".into(),
        });
    }
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            offset: 4,
            msg: format!("unsupported version {version}"),
        });
    }
    let count = r.u16("layer count")? as usize;
    let mut specs = Vec::with_capacity(count);
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let at = r.pos;
        let spec = match r.u8("layer tag")? {
            tag::INPUT => LayerSpec::Input {
                shape: r.shape("input shape")?,
            },
            tag::RESHAPE => LayerSpec::Reshape {
                shape: r.shape("reshape shape")?,
            },
            tag::TRANSPOSE => LayerSpec::Transpose,
            t @ (tag::CONV1D | tag::CONV2D) => {
                let in_channels = r.usize("conv in_channels")?;
                let filters = r.usize("conv filters")?;
                let kernel = r.usize("conv kernel")?;
                if t == tag::CONV1D {
                    LayerSpec::Conv1d {
                        in_channels,
                        filters,
                        kernel,
                    }
                } else {
                    LayerSpec::Conv2d {
                        in_channels,
                        filters,
                        kernel,
                    }
                }
            }
            tag::MAXPOOL1D => LayerSpec::MaxPool1d {
                pool: r.usize("pool")?,
            },
            tag::MAXPOOL2D => LayerSpec::MaxPool2d {
                pool: r.usize("pool")?,
            },
            tag::FLATTEN => LayerSpec::Flatten,
            tag::DENSE => LayerSpec::Dense {
                inputs: r.usize("dense inputs")?,
                units: r.usize("dense units")?,
            },
            tag::RELU => LayerSpec::Relu,
            tag::SIGMOID => LayerSpec::Sigmoid,
            tag::SOFTMAX => LayerSpec::Softmax,
            tag::DROPOUT => LayerSpec::Dropout {
                p: f64::from_le_bytes(r.take(8, "dropout p")?.try_into().expect("8 bytes")),
            },
            tag::L2NORM => LayerSpec::L2Normalize,
            other => {
                return Err(Error::Format {
                    offset: at,
                    msg: format!("unknown layer tag {other}"),
                })
            }
        };
        spec.validate().map_err(|e| Error::Format {
            offset: at,
            msg: e.to_string(),
        })?;
        let mut tensors = Vec::new();
        for expected in spec.param_shapes() {
            let t_at = r.pos;
            let shape = r.shape("tensor shape")?;
            if shape != expected {
                return Err(Error::Format {
                    offset: t_at,
                    msg: format!(
                        "{} parameter shape {shape:?}, expected {expected:?}",
                        spec.name()
                    ),
                });
            }
            let n: usize = shape.iter().product();
            let raw = r.take(4 * n, "tensor data")?;
            let data = raw
                .chunks_exact(4)
                .map(|c| {
                    T::from_f32(f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .unwrap_or_else(T::nan)
                })
                .collect();
            tensors.push(Tensor::new(shape, data)?);
        }
        specs.push(spec);
        params.push(tensors);
    }
    let body_end = r.pos;
    let stored = r.u32("checksum")?;
    if r.pos != bytes.len() {
        return Err(Error::Format {
            offset: r.pos,
            msg: "trailing bytes after checksum".into(),
        });
    }
    if crc32fast::hash(&bytes[..body_end]) != stored {
        return Err(Error::Format {
            offset: body_end,
            msg: "checksum mismatch".into(),
        });
    }
    let mut model = NetworkModel::new(specs).map_err(|e| Error::Format {
        offset: 8,
        msg: format!("inconsistent layer list: {e}"),
    })?;
    model.set_params(params)?;
    Ok(model)
}

pub fn save<T: Scalar>(model: &NetworkModel<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_checkpoint(model))?;
    Ok(())
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<NetworkModel<T>> {
    read_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{
        build_classifier, build_conv1dnet, build_facenet, with_l2_normalization, Mode,
    };

    #[test]
    fn roundtrip_preserves_specs_and_outputs() {
        let m = build_conv1dnet::<f64>().initialized(3);
        let back: NetworkModel<f64> = read_checkpoint(&write_checkpoint(&m)).unwrap();
        assert_eq!(back.specs(), m.specs());
        let x = Tensor::from_fn(&[28, 28], |i| ((i * 7919) % 101) as f64 / 50.0 - 1.0);
        let a = m.forward(&x, Mode::Infer).unwrap();
        let b = back.forward(&x, Mode::Infer).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-6);
        // Once quantized, a second round-trip is exact.
        assert_eq!(
            read_checkpoint::<f64>(&write_checkpoint(&back)).unwrap(),
            back
        );
    }

    #[test]
    fn dropout_and_extra_layers_roundtrip() {
        let m = with_l2_normalization(&build_facenet::<f32>().initialized(1)).unwrap();
        let c = build_classifier::<f32>().initialized(2);
        let full = m.compose(&c).unwrap();
        let back: NetworkModel<f32> = read_checkpoint(&write_checkpoint(&full)).unwrap();
        assert_eq!(back, full);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = write_checkpoint(&build_classifier::<f64>().initialized(1));
        assert!(matches!(
            read_checkpoint::<f64>(&[]),
            Err(Error::Format { offset: 0, .. })
        ));

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_checkpoint::<f64>(&bad),
            Err(Error::Format { offset: 0, .. })
        ));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            read_checkpoint::<f64>(&bad),
            Err(Error::Format { offset: 4, .. })
        ));

        let cut = &bytes[..bytes.len() - 10];
        assert!(
            matches!(read_checkpoint::<f64>(cut), Err(Error::Format { offset, .. }) if offset == cut.len())
        );

        let mut bad = bytes.clone();
        let mid = bytes.len() / 2;
        bad[mid] ^= 0x55;
        assert!(matches!(
            read_checkpoint::<f64>(&bad),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn save_and_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = build_facenet::<f64>().initialized(4);
        save(&m, &path).unwrap();
        let back: NetworkModel<f64> = load(&path).unwrap();
        assert_eq!(back.specs(), m.specs());
        std::fs::write(&path, b"").unwrap();
        assert!(matches!(load::<f64>(&path), Err(Error::Format { .. })));
    }
}
