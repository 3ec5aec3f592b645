use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cvtomo::fock::DensityMatrix;
use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;
use crate::{CliError, CliResult};

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn read_json(path: &Path) -> CliResult<Value> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Creates the output directory and records the resolved config in `run.toml`.
pub fn prepare_out(cfg: &RunConfig) -> CliResult<PathBuf> {
    let out = cfg.out_dir()?;
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("run.toml"), cfg.to_toml()?)?;
    Ok(out)
}

pub fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} {} does not exist", path.display())))
    }
}

/// A density matrix with a `meta` object alongside its entries.
pub fn density_json(rho: &DensityMatrix, meta: Value) -> CliResult<Value> {
    let mut v = serde_json::to_value(rho)?;
    if let Value::Object(m) = &mut v {
        m.insert("meta".into(), meta);
    }
    Ok(v)
}

/// Reads a density matrix from either a bare `{dim, re, im}` file or a
/// file holding one under `key` (e.g. `truth.json`).
pub fn read_density(path: &Path, key: &str) -> CliResult<DensityMatrix> {
    require_file(path, "density file")?;
    let v = read_json(path)?;
    let inner = match v.get(key) {
        Some(x) if x.get("re").is_some() => x.clone(),
        _ => v,
    };
    serde_json::from_value(inner)
        .map_err(|e| CliError::Config(format!("{} is not a density matrix: {e}", path.display())))
}
