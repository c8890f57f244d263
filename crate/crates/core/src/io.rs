//! Dataset files: a CSV with header `y,x1,...,xp,label` and a JSON sidecar
//! holding the generation metadata next to it (same stem, `.json` extension).

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, GenMeta, Label};

/// Metadata stored beside the CSV. An infinite `rho` is written as `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub p: usize,
    pub k: Option<usize>,
    #[serde(rename = "M")]
    pub l1_budget: Option<f64>,
    pub sigma: Option<f64>,
    pub sigma_e: Option<f64>,
    pub seed: Option<u64>,
    pub r: usize,
    pub n: usize,
    pub rho: Option<f64>,
    pub theta_star: Option<Vec<f64>>,
}

impl Sidecar {
    pub fn from_dataset(data: &Dataset) -> Self {
        let meta = data.meta.as_ref();
        Self {
            p: data.p(),
            k: meta.map(|m| m.k),
            l1_budget: meta.map(|m| m.l1_budget),
            sigma: meta.map(|m| m.sigma),
            sigma_e: meta.map(|m| m.sigma_e),
            seed: meta.map(|m| m.seed),
            r: data.r,
            n: data.n(),
            rho: data.rho.filter(|r| r.is_finite()),
            theta_star: data.theta_star.as_ref().map(|t| t.iter().copied().collect()),
        }
    }
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes the CSV and its sidecar.
pub fn write_dataset(data: &Dataset, csv_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(csv_path)?;
    let mut header = vec!["y".to_string()];
    header.extend((1..=data.p()).map(|j| format!("x{j}")));
    header.push("label".into());
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec = Vec::with_capacity(data.p() + 2);
        rec.push(data.y[i].to_string());
        rec.extend(data.x.row(i).iter().map(|v| v.to_string()));
        rec.push(data.labels[i].as_str().to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    write_json(&Sidecar::from_dataset(data), &sidecar_path(csv_path))
}

/// Reads a dataset CSV, attaching the sidecar metadata when the file exists.
pub fn read_dataset(csv_path: &Path) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_path(csv_path)?;
    let header = rdr.headers()?.clone();
    let cols = header.len();
    if cols < 3 || &header[0] != "y" || &header[cols - 1] != "label" {
        return Err(Error::InvalidConfig(format!("{}: expected header y,x1,...,xp,label", csv_path.display())));
    }
    let p = cols - 2;
    let mut ys = Vec::new();
    let mut xs = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse =
            |s: &str| s.trim().parse::<f64>().map_err(|e| Error::InvalidConfig(format!("row {}: {e}", line + 1)));
        ys.push(parse(&rec[0])?);
        for j in 0..p {
            xs.push(parse(&rec[j + 1])?);
        }
        labels.push(rec[cols - 1].trim().parse::<Label>()?);
    }
    let n = ys.len();
    let x = DMatrix::from_row_slice(n, p, &xs);
    let mut data = Dataset::new(x, DVector::from_vec(ys), labels)?;

    let side = sidecar_path(csv_path);
    if side.exists() {
        let meta: Sidecar = read_json(&side)?;
        if meta.p != p || meta.n != n {
            return Err(Error::DimensionMismatch(format!(
                "sidecar describes n = {}, p = {}; CSV has n = {n}, p = {p}",
                meta.n, meta.p
            )));
        }
        if let Some(t) = meta.theta_star {
            data = data.with_theta_star(DVector::from_vec(t))?;
        }
        data.rho = meta.rho.or((data.n_outliers() == 0).then_some(f64::INFINITY));
        if let (Some(k), Some(l1_budget), Some(sigma), Some(sigma_e), Some(seed)) =
            (meta.k, meta.l1_budget, meta.sigma, meta.sigma_e, meta.seed)
        {
            data.meta = Some(GenMeta { p, k, l1_budget, sigma, sigma_e, seed });
        }
    }
    Ok(data)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}
