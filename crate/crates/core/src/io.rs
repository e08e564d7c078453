//! CSV persistence for datasets and federated shard layouts.
//!
//! Dataset files carry the header `x_0,...,x_{d-1},y` plus a trailing `z` column
//! when labels are present. Floats are written in shortest round-trip form, so
//! reading a file back reproduces every value exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Dataset, FederatedDataset};

pub fn write_dataset<W: Write>(data: &Dataset, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (0..data.d()).map(|j| format!("x_{j}")).collect();
    header.push("y".into());
    if data.zs().is_some() {
        header.push("z".into());
    }
    out.write_record(&header)?;
    let mut rec = Vec::with_capacity(header.len());
    for i in 0..data.n() {
        rec.clear();
        rec.extend(data.x(i).iter().map(|v| v.to_string()));
        rec.push(data.y(i).to_string());
        if let Some(z) = data.zs() {
            rec.push(z[i].to_string());
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(r: R) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    let cols: Vec<&str> = header.iter().collect();
    let has_z = cols.last() == Some(&"z");
    let y_at = cols.len().checked_sub(if has_z { 2 } else { 1 }).ok_or_else(|| bad("empty header"))?;
    if cols[y_at] != "y" {
        return Err(bad("missing y column"));
    }
    for (j, c) in cols[..y_at].iter().enumerate() {
        if *c != format!("x_{j}") {
            return Err(bad(&format!("unexpected column {c}")));
        }
    }
    let d = y_at;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut zs = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != cols.len() {
            return Err(bad(&format!("row {line} has {} fields, expected {}", rec.len(), cols.len())));
        }
        for j in 0..d {
            xs.push(parse_f64(&rec[j], line)?);
        }
        ys.push(parse_f64(&rec[d], line)?);
        if has_z {
            zs.push(rec[d + 1].trim().parse::<u32>().map_err(|_| bad(&format!("row {line}: bad label")))?);
        }
    }
    Dataset::new(d, xs, ys, has_z.then_some(zs))
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| bad(&format!("row {line}: cannot parse {s:?}")))
}

fn bad(msg: &str) -> Error {
    Error::Malformed(msg.to_string())
}

pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    write_dataset(data, BufWriter::new(File::create(path)?))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?))
}

/// Shard layout: `agent_id,row_start,row_count` plus `z_m` under per-agent clusters.
pub fn write_layout<W: Write>(fed: &FederatedDataset, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["agent_id", "row_start", "row_count"];
    if fed.assignment.is_some() {
        header.push("z_m");
    }
    out.write_record(&header)?;
    for (m, (start, shard)) in fed.row_starts().into_iter().zip(&fed.shards).enumerate() {
        let mut rec = vec![m.to_string(), start.to_string(), shard.n().to_string()];
        if let Some(a) = &fed.assignment {
            rec.push(a[m].to_string());
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Rebuilds shards from pooled rows and a layout written by [`write_layout`].
pub fn read_layout<R: Read>(pooled: &Dataset, r: R) -> Result<FederatedDataset> {
    let mut rdr = csv::Reader::from_reader(r);
    let with_z = rdr.headers()?.len() == 4;
    let mut sizes = Vec::new();
    let mut labels = Vec::new();
    let mut expect_start = 0usize;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |k: usize| -> Result<usize> {
            rec.get(k).and_then(|s| s.trim().parse().ok()).ok_or_else(|| bad(&format!("layout row {line} is malformed")))
        };
        if num(0)? != line || num(1)? != expect_start {
            return Err(bad(&format!("layout row {line} is out of order")));
        }
        let count = num(2)?;
        expect_start += count;
        sizes.push(count);
        if with_z {
            labels.push(num(3)? as u32);
        }
    }
    let mut fed = FederatedDataset::from_sizes(pooled, &sizes)?;
    if with_z {
        fed.assignment = Some(labels);
    }
    Ok(fed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_federated, ClusterMode, GenConfig, XLaw};

    #[test]
    fn dataset_round_trip_is_exact() {
        let g = GenConfig { n: 1, d: 3, snr: 2.0, sigma2: 1.0, x_law: XLaw::StandardNormal, seed: 5 };
        let p = g.symmetric_params().unwrap();
        let fed = generate_federated(&g, &p, 3, 4, ClusterMode::PerAgent).unwrap();
        let pooled = fed.pooled().unwrap();
        let mut buf = Vec::new();
        write_dataset(&pooled, &mut buf).unwrap();
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back, pooled);

        let mut lay = Vec::new();
        write_layout(&fed, &mut lay).unwrap();
        assert!(String::from_utf8(lay.clone()).unwrap().starts_with("agent_id,row_start,row_count,z_m"));
        assert_eq!(read_layout(&back, lay.as_slice()).unwrap(), fed);

        let unlabeled = pooled.without_labels();
        let mut buf = Vec::new();
        write_dataset(&unlabeled, &mut buf).unwrap();
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), unlabeled);
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(read_dataset("x_0,q\n1,2\n".as_bytes()), Err(Error::Malformed(_))));
        assert!(matches!(read_dataset("x_0,y\n1,abc\n".as_bytes()), Err(Error::Malformed(_))));
        assert!(read_dataset("x_0,y\n1\n".as_bytes()).is_err());
    }
}
