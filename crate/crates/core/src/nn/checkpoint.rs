//! Network checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! magic   "PSNN"
//! version u32            (= 1)
//! layers  u32
//! per layer: in u32, out u32, activation u8 (0 relu, 1 tanh, 2 identity, 3 sigmoid)
//! params  f64 × P        canonical flattening order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Activation, DenseNet, Layer};
use crate::binio::*;
use crate::error::{Error, Result};

pub const NET_MAGIC: &[u8; 4] = b"PSNN";
pub const NET_VERSION: u32 = 1;

const MAX_LAYERS: u64 = 1 << 10;
const MAX_WIDTH: u64 = 1 << 20;

pub fn write_net_to(w: &mut impl Write, net: &DenseNet) -> Result<()> {
    w.write_all(NET_MAGIC)?;
    put_u32(w, NET_VERSION)?;
    put_u32(w, net.layers().len() as u32)?;
    for layer in net.layers() {
        put_u32(w, layer.input_dim() as u32)?;
        put_u32(w, layer.output_dim() as u32)?;
        put_u8(w, layer.activation.code())?;
    }
    for p in net.flatten() {
        put_f64(w, p)?;
    }
    Ok(())
}

pub fn read_net_from(r: &mut impl Read) -> Result<DenseNet> {
    expect_magic(r, NET_MAGIC)?;
    let version = get_u32(r, "version")?;
    if version != NET_VERSION {
        return Err(Error::Version(version));
    }
    let n = checked_len(u64::from(get_u32(r, "layer count")?), MAX_LAYERS, "layer")?;
    let mut shapes = Vec::with_capacity(n);
    for _ in 0..n {
        let input = checked_len(u64::from(get_u32(r, "layer input")?), MAX_WIDTH, "width")?;
        let output = checked_len(u64::from(get_u32(r, "layer output")?), MAX_WIDTH, "width")?;
        let code = get_u8(r, "activation")?;
        let act = Activation::from_code(code)
            .ok_or_else(|| Error::Corrupt(format!("unknown activation code {code}")))?;
        shapes.push((input, output, act));
    }
    let mut layers = Vec::with_capacity(n);
    for (input, output, activation) in shapes {
        let mut weights = Array2::zeros((output, input));
        for w in weights.iter_mut() {
            *w = get_f64(r, "weights")?;
        }
        let mut bias = Array1::zeros(output);
        for b in bias.iter_mut() {
            *b = get_f64(r, "bias")?;
        }
        layers.push(Layer {
            weights,
            bias,
            activation,
        });
    }
    DenseNet::new(layers).map_err(|e| Error::Corrupt(e.to_string()))
}

pub fn write_net(path: impl AsRef<Path>, net: &DenseNet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_net_to(&mut w, net)?;
    w.flush()?;
    Ok(())
}

pub fn read_net(path: impl AsRef<Path>) -> Result<DenseNet> {
    read_net_from(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseSource;

    fn sample() -> DenseNet {
        let mut noise = NoiseSource::new(1, 0);
        DenseNet::init(&[3, 4, 2], Activation::Relu, Activation::Sigmoid, &mut noise).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let net = sample();
        let mut buf = Vec::new();
        write_net_to(&mut buf, &net).unwrap();
        assert_eq!(read_net_from(&mut buf.as_slice()).unwrap(), net);
    }

    #[test]
    fn truncation_is_reported() {
        let mut buf = Vec::new();
        write_net_to(&mut buf, &sample()).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_net_from(&mut buf.as_slice()), Err(Error::Corrupt(_))));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let mut buf = Vec::new();
        write_net_to(&mut buf, &sample()).unwrap();
        buf[4] = 9;
        assert!(matches!(read_net_from(&mut buf.as_slice()), Err(Error::Version(9))));
    }
}
