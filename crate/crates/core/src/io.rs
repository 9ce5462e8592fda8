//! On-disk layout of an instance: `x.csv` (design, one row per sample),
//! `y.csv` (response), and `meta.json` (seed, s_star, beta_true).
//!
//! Floats are written in Rust's shortest round-trip form, so a save/load
//! cycle is bit-exact.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RegressionInstance;

pub const X_FILE: &str = "x.csv";
pub const Y_FILE: &str = "y.csv";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub n: usize,
    pub p: usize,
    pub seed: u64,
    pub s_star: usize,
    pub beta_true: Option<Vec<f64>>,
}

pub fn save_instance(instance: &RegressionInstance, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut wx = csv::Writer::from_path(dir.join(X_FILE))?;
    wx.write_record((1..=instance.p).map(|j| format!("x{j}")))?;
    for i in 0..instance.n {
        wx.write_record((0..instance.p).map(|j| instance.x[(i, j)].to_string()))?;
    }
    wx.flush().map_err(|e| Error::io(dir.join(X_FILE), e))?;

    let mut wy = csv::Writer::from_path(dir.join(Y_FILE))?;
    wy.write_record(["y"])?;
    for v in instance.y.iter() {
        wy.write_record([v.to_string()])?;
    }
    wy.flush().map_err(|e| Error::io(dir.join(Y_FILE), e))?;

    let meta = InstanceMeta {
        n: instance.n,
        p: instance.p,
        seed: instance.seed,
        s_star: instance.s_star,
        beta_true: instance.beta_true.as_ref().map(|b| b.iter().copied().collect()),
    };
    let text = serde_json::to_string_pretty(&meta)?;
    fs::write(dir.join(META_FILE), text).map_err(|e| Error::io(dir.join(META_FILE), e))?;
    Ok(())
}

fn parse_f64(field: &str, path: &Path) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Dimension(format!("{}: cannot parse {field:?}", path.display())))
}

pub fn load_instance(dir: &Path) -> Result<RegressionInstance> {
    let meta_path = dir.join(META_FILE);
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: InstanceMeta = serde_json::from_str(&meta_text)?;

    let x_path = dir.join(X_FILE);
    let mut rx = csv::Reader::from_path(&x_path)?;
    let mut values = Vec::with_capacity(meta.n * meta.p);
    let mut rows = 0;
    for rec in rx.records() {
        let rec = rec?;
        if rec.len() != meta.p {
            return Err(Error::Dimension(format!(
                "{}: row {rows} has {} columns, expected {}",
                x_path.display(),
                rec.len(),
                meta.p
            )));
        }
        for field in rec.iter() {
            values.push(parse_f64(field, &x_path)?);
        }
        rows += 1;
    }
    if rows != meta.n {
        return Err(Error::Dimension(format!(
            "{}: {rows} rows, expected {}",
            x_path.display(),
            meta.n
        )));
    }
    let x = DMatrix::from_row_slice(meta.n, meta.p, &values);

    let y_path = dir.join(Y_FILE);
    let mut ry = csv::Reader::from_path(&y_path)?;
    let mut y = Vec::with_capacity(meta.n);
    for rec in ry.records() {
        let rec = rec?;
        y.push(parse_f64(&rec[0], &y_path)?);
    }

    RegressionInstance::new(
        x,
        DVector::from_vec(y),
        meta.beta_true.map(DVector::from_vec),
        meta.s_star,
        meta.seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate, BetaPattern, DesignKind, GeneratorSpec};

    #[test]
    fn round_trip_is_bit_exact() {
        let inst = generate(&GeneratorSpec {
            n: 7,
            p: 5,
            s_star: 2,
            beta_pattern: BetaPattern::Decaying,
            design_kind: DesignKind::IidStandardNormal,
            seed: 99,
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_instance(&inst, dir.path()).unwrap();
        let back = load_instance(dir.path()).unwrap();
        assert_eq!(inst, back);
    }

    #[test]
    fn short_response_rejected() {
        let inst = generate(&GeneratorSpec {
            n: 4,
            p: 3,
            s_star: 1,
            beta_pattern: BetaPattern::EqualMagnitude { level: 1.0 },
            design_kind: DesignKind::IidStandardNormal,
            seed: 1,
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_instance(&inst, dir.path()).unwrap();
        fs::write(dir.path().join(Y_FILE), "y\n1.0\n2.0\n").unwrap();
        assert!(matches!(
            load_instance(dir.path()),
            Err(Error::Dimension(_))
        ));
    }
}
