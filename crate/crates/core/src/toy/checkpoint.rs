use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

use super::model::{Stage, ToyModel};

pub const MANIFEST_HEADER: &str = "djcm-checkpoint v1";

/// Path of the manifest written next to a checkpoint.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

/// Writes the arrays as little-endian `f64` to `path` and the text
/// manifest to `path.manifest`.
pub fn save_checkpoint(model: &ToyModel, path: &Path) -> Result<()> {
    let mut data = Vec::with_capacity(model.param_count() * 8);
    let mut manifest = format!(
        "{MANIFEST_HEADER}\nstage {}\norders {}\nlambda {}\npower {}\neta {} {}\n",
        model.stage.name(),
        model.orders.iter().map(u32::to_string).collect::<Vec<_>>().join(" "),
        model.lambda,
        model.power,
        model.eta1,
        model.eta2,
    );
    let mut offset = 0;
    for (name, a) in model.params() {
        let shape: Vec<String> = a.shape().iter().map(usize::to_string).collect();
        manifest.push_str(&format!("array {name} {offset} {}\n", shape.join(" ")));
        for v in a.iter() {
            data.extend_from_slice(&v.to_le_bytes());
        }
        offset += a.len();
    }
    fs::write(path, data)?;
    fs::write(manifest_path(path), manifest)?;
    Ok(())
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn num<T: std::str::FromStr>(s: Option<&str>, what: &str) -> Result<T> {
    s.and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(format!("malformed {what}")))
}

pub fn load_checkpoint(path: &Path) -> Result<ToyModel> {
    let mpath = manifest_path(path);
    let text = fs::read_to_string(&mpath)
        .map_err(|e| bad(format!("{}: {e}", mpath.display())))?;
    let data = fs::read(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    if data.len() % 8 != 0 {
        return Err(bad("data length is not a multiple of 8"));
    }
    let values: Vec<f64> = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(bad(format!("{} does not start with '{MANIFEST_HEADER}'", mpath.display())));
    }
    let mut meta = ToyModel {
        orders: Vec::new(),
        stage: Stage::Init,
        lambda: 0.0,
        power: 1.0,
        eta1: 0.4,
        eta2: 0.2,
        params: BTreeMap::new(),
    };
    let mut params = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let mut f = line.split_whitespace();
        match f.next() {
            Some("stage") => {
                meta.stage = f
                    .next()
                    .and_then(Stage::parse)
                    .ok_or_else(|| bad(format!("line {}: unknown stage", i + 2)))?
            }
            Some("orders") => meta.orders = f.map(|s| num(Some(s), "order")).collect::<Result<_>>()?,
            Some("lambda") => meta.lambda = num(f.next(), "lambda")?,
            Some("power") => meta.power = num(f.next(), "power")?,
            Some("eta") => {
                meta.eta1 = num(f.next(), "eta1")?;
                meta.eta2 = num(f.next(), "eta2")?;
            }
            Some("array") => {
                let name = f.next().ok_or_else(|| bad(format!("line {}: missing name", i + 2)))?;
                let offset: usize = num(f.next(), "offset")?;
                let shape: Vec<usize> = f.map(|s| num(Some(s), "shape")).collect::<Result<_>>()?;
                let len: usize = shape.iter().product();
                let slice = values
                    .get(offset..offset + len)
                    .ok_or_else(|| bad(format!("{name}: data out of range")))?;
                params.insert(
                    name.to_string(),
                    ArrayD::from_shape_vec(IxDyn(&shape), slice.to_vec()).unwrap(),
                );
            }
            None => {}
            Some(other) => return Err(bad(format!("line {}: unknown key '{other}'", i + 2))),
        }
    }
    ToyModel::from_parts(meta, params)
}
