//! Model checkpoints: a small header followed by network records.
//!
//! ```text
//! magic        "PSGM"
//! version      u32   (= 1)
//! kind         u8    0 diffusion, 1 gan
//! data_dim     u32
//! num_classes  u32
//! diffusion:   T u32, betas f64 × T, denoiser network
//! gan:         latent_dim u32, generator network, discriminator network
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DiffusionModel, DiffusionSchedule, GanModel, GenerativeModel, ModelBody};
use crate::binio::*;
use crate::error::{Error, Result};
use crate::nn::{read_net_from, write_net_to};

pub const MODEL_MAGIC: &[u8; 4] = b"PSGM";
pub const MODEL_VERSION: u32 = 1;

const MAX_STEPS: u64 = 1 << 20;

pub fn write_model_to(w: &mut impl Write, model: &GenerativeModel) -> Result<()> {
    w.write_all(MODEL_MAGIC)?;
    put_u32(w, MODEL_VERSION)?;
    match &model.body {
        ModelBody::Diffusion(m) => {
            put_u8(w, 0)?;
            put_u32(w, model.data_dim() as u32)?;
            put_u32(w, model.num_classes() as u32)?;
            put_u32(w, m.schedule.steps() as u32)?;
            for &b in m.schedule.betas() {
                put_f64(w, b)?;
            }
            write_net_to(w, &m.denoiser)
        }
        ModelBody::Gan(m) => {
            put_u8(w, 1)?;
            put_u32(w, model.data_dim() as u32)?;
            put_u32(w, model.num_classes() as u32)?;
            put_u32(w, m.latent_dim as u32)?;
            write_net_to(w, &m.generator)?;
            write_net_to(w, &m.discriminator)
        }
    }
}

pub fn read_model_from(r: &mut impl Read) -> Result<GenerativeModel> {
    expect_magic(r, MODEL_MAGIC)?;
    let version = get_u32(r, "version")?;
    if version != MODEL_VERSION {
        return Err(Error::Version(version));
    }
    let kind = get_u8(r, "model kind")?;
    let data_dim = get_u32(r, "data dimension")? as usize;
    let num_classes = get_u32(r, "class count")? as usize;
    let body = match kind {
        0 => {
            let t = checked_len(u64::from(get_u32(r, "schedule length")?), MAX_STEPS, "schedule")?;
            let betas = (0..t).map(|_| get_f64(r, "betas")).collect::<Result<Vec<_>>>()?;
            let schedule = DiffusionSchedule::from_betas(betas).map_err(|e| Error::Corrupt(e.to_string()))?;
            let denoiser = read_net_from(r)?;
            ModelBody::Diffusion(DiffusionModel { denoiser, schedule })
        }
        1 => {
            let latent_dim = get_u32(r, "latent dimension")? as usize;
            let generator = read_net_from(r)?;
            let discriminator = read_net_from(r)?;
            ModelBody::Gan(GanModel {
                generator,
                discriminator,
                latent_dim,
            })
        }
        other => return Err(Error::Corrupt(format!("unknown model kind {other}"))),
    };
    GenerativeModel::from_parts(body, data_dim, num_classes).map_err(|e| Error::Corrupt(e.to_string()))
}

pub fn write_model(path: impl AsRef<Path>, model: &GenerativeModel) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model_to(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn read_model(path: impl AsRef<Path>) -> Result<GenerativeModel> {
    read_model_from(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generative::{ModelKind, ModelSpec};
    use crate::noise::NoiseSource;

    #[test]
    fn round_trip_both_kinds() {
        for kind in [ModelKind::Diffusion, ModelKind::Gan] {
            let mut spec = ModelSpec::new(kind, 3, 2);
            spec.hidden = vec![5];
            spec.diffusion_steps = 7;
            let m = GenerativeModel::init(&spec, &mut NoiseSource::new(4, 0)).unwrap();
            let mut buf = Vec::new();
            write_model_to(&mut buf, &m).unwrap();
            assert_eq!(read_model_from(&mut buf.as_slice()).unwrap(), m);
            buf.truncate(buf.len() - 1);
            assert!(matches!(read_model_from(&mut buf.as_slice()), Err(Error::Corrupt(_))));
        }
    }
}
