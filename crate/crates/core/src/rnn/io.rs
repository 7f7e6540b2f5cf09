//! Versioned binary model files.
//!
//! Layout: magic `EBBM`, format version, cell kind, the three dimensions and
//! the seed lineage as little-endian integers, then every parameter tensor in
//! declared order as 64-bit little-endian floats.

use std::io::{Read, Write};
use std::path::Path;

use super::{Architecture, CellKind, NetworkParameters};
use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"EBBM";
const VERSION: u32 = 1;

fn cell_code(kind: CellKind) -> u8 {
    match kind {
        CellKind::Gru => 0,
        CellKind::Lstm => 1,
        CellKind::Nbrc => 2,
    }
}

fn cell_from_code(code: u8) -> Result<CellKind> {
    match code {
        0 => Ok(CellKind::Gru),
        1 => Ok(CellKind::Lstm),
        2 => Ok(CellKind::Nbrc),
        other => Err(Error::ModelFile(format!("unknown cell code {other}"))),
    }
}

pub fn write_model(mut writer: impl Write, params: &NetworkParameters) -> Result<()> {
    let arch = params.arch();
    writer.write_all(&MAGIC)?;
    writer.write_all(&VERSION.to_le_bytes())?;
    writer.write_all(&[cell_code(arch.cell_kind), 0, 0, 0])?;
    for dim in [
        arch.first_layer as u64,
        arch.second_layer as u64,
        arch.input_dim as u64,
        params.seed(),
        params.data().len() as u64,
    ] {
        writer.write_all(&dim.to_le_bytes())?;
    }
    for v in params.data() {
        writer.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_model(mut reader: impl Read) -> Result<NetworkParameters> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::ModelFile("bad magic, not a model file".into()));
    }
    let mut u32buf = [0u8; 4];
    reader.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::ModelFile(format!(
            "unsupported model version {version}, expected {VERSION}"
        )));
    }
    reader.read_exact(&mut u32buf)?;
    let kind = cell_from_code(u32buf[0])?;
    let mut u64buf = [0u8; 8];
    let mut read_u64 = |r: &mut dyn Read| -> Result<u64> {
        r.read_exact(&mut u64buf)?;
        Ok(u64::from_le_bytes(u64buf))
    };
    let first = read_u64(&mut reader)? as usize;
    let second = read_u64(&mut reader)? as usize;
    let input = read_u64(&mut reader)? as usize;
    let seed = read_u64(&mut reader)?;
    let count = read_u64(&mut reader)? as usize;
    let arch = Architecture::new(kind, first, second, input)?;
    if count != arch.parameter_count() {
        return Err(Error::ModelFile(format!(
            "file declares {count} parameters, architecture needs {}",
            arch.parameter_count()
        )));
    }
    let mut data = vec![0.0f64; count];
    let mut f64buf = [0u8; 8];
    for v in &mut data {
        reader.read_exact(&mut f64buf)?;
        *v = f64::from_le_bytes(f64buf);
    }
    NetworkParameters::from_parts(arch, seed, data)
}

/// Saves atomically: writes a sibling temp file, then renames into place.
pub fn save_model_file(path: impl AsRef<Path>, params: &NetworkParameters) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    {
        let mut file = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        write_model(&mut file, params)?;
        file.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_model_file(path: impl AsRef<Path>) -> Result<NetworkParameters> {
    read_model(std::io::BufReader::new(std::fs::File::open(path)?))
}
