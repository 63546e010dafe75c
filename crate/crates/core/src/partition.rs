//! Random horizontal partitioning of a pooled CSV file into partner shards.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::PARTNER_VAR;

pub const DEFAULT_SEED: u64 = 20180101;

/// Per-shard event counts, for reproducing a known event layout.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTarget {
    pub censoring_var: String,
    pub censoring_level: f64,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub sizes: Vec<usize>,
    pub seed: u64,
    pub events: Option<EventTarget>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::csv(path, e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()
        .map_err(|e| Error::csv(path, e))?;
    Ok((header, rows))
}

/// Shuffles rows with a seeded ChaCha8 generator and splits them into
/// consecutive shards, appending `dp_cd` = 1..K.
pub fn partition_rows(header: &[String], rows: &[Vec<String>], plan: &PartitionPlan) -> Result<Vec<Shard>> {
    let requested: usize = plan.sizes.iter().sum();
    if requested != rows.len() || plan.sizes.is_empty() {
        return Err(Error::SizeMismatch {
            requested,
            available: rows.len(),
        });
    }
    if header.iter().any(|h| h.eq_ignore_ascii_case(PARTNER_VAR)) {
        return Err(Error::InvalidSpec(format!("input already has a `{PARTNER_VAR}` column")));
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    order.shuffle(&mut rng);

    let assignment: Vec<Vec<usize>> = match &plan.events {
        None => {
            let mut start = 0;
            plan.sizes
                .iter()
                .map(|&n| {
                    let part = order[start..start + n].to_vec();
                    start += n;
                    part
                })
                .collect()
        }
        Some(target) => split_by_events(header, rows, &order, &plan.sizes, target)?,
    };

    let mut out_header = header.to_vec();
    out_header.push(PARTNER_VAR.to_string());
    Ok(assignment
        .into_iter()
        .enumerate()
        .map(|(k, idx)| Shard {
            header: out_header.clone(),
            rows: idx
                .into_iter()
                .map(|i| {
                    let mut row = rows[i].clone();
                    row.push((k + 1).to_string());
                    row
                })
                .collect(),
        })
        .collect())
}

fn split_by_events(
    header: &[String],
    rows: &[Vec<String>],
    order: &[usize],
    sizes: &[usize],
    target: &EventTarget,
) -> Result<Vec<Vec<usize>>> {
    let col = header
        .iter()
        .position(|h| h.eq_ignore_ascii_case(&target.censoring_var))
        .ok_or_else(|| Error::MissingColumn(target.censoring_var.clone()))?;
    let is_event = |i: usize| {
        rows[i]
            .get(col)
            .and_then(|v| v.trim().parse::<f64>().ok())
            .is_some_and(|v| v != target.censoring_level)
    };
    let (events, others): (Vec<usize>, Vec<usize>) = order.iter().partition(|&&i| is_event(i));
    let wanted: usize = target.counts.iter().sum();
    if target.counts.len() != sizes.len() || wanted != events.len() {
        return Err(Error::SizeMismatch {
            requested: wanted,
            available: events.len(),
        });
    }
    let (mut e, mut o) = (events.into_iter(), others.into_iter());
    sizes
        .iter()
        .zip(&target.counts)
        .map(|(&n, &d)| {
            if d > n {
                return Err(Error::SizeMismatch {
                    requested: d,
                    available: n,
                });
            }
            let mut part: Vec<usize> = e.by_ref().take(d).chain(o.by_ref().take(n - d)).collect();
            // Keep the shuffled order rather than events-first.
            part.sort_by_key(|i| order.iter().position(|j| j == i));
            Ok(part)
        })
        .collect()
}

pub fn write_shard(shard: &Shard, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(&shard.header).map_err(|e| Error::csv(path, e))?;
    for row in &shard.rows {
        w.write_record(row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads `input`, partitions it and writes one file per shard.
pub fn partition_file(input: &Path, plan: &PartitionPlan, outputs: &[PathBuf]) -> Result<Vec<Shard>> {
    if outputs.len() != plan.sizes.len() {
        return Err(Error::InvalidSpec(format!(
            "{} output paths for {} shards",
            outputs.len(),
            plan.sizes.len()
        )));
    }
    let (header, rows) = read_rows(input)?;
    let shards = partition_rows(&header, &rows, plan)?;
    for (shard, path) in shards.iter().zip(outputs) {
        write_shard(shard, path)?;
    }
    Ok(shards)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(n: usize) -> (Vec<String>, Vec<Vec<String>>) {
        let header = vec!["t".to_string(), "e".to_string()];
        let rows = (0..n).map(|i| vec![(i + 1).to_string(), u8::from(i % 3 == 0).to_string()]).collect();
        (header, rows)
    }

    fn plan(sizes: &[usize], seed: u64) -> PartitionPlan {
        PartitionPlan {
            sizes: sizes.to_vec(),
            seed,
            events: None,
        }
    }

    #[test]
    fn sizes_and_partner_column() {
        let (h, r) = data(12);
        let shards = partition_rows(&h, &r, &plan(&[3, 4, 5], 7)).unwrap();
        assert_eq!(shards.iter().map(|s| s.rows.len()).collect::<Vec<_>>(), vec![3, 4, 5]);
        assert_eq!(shards[2].header.last().unwrap(), "dp_cd");
        assert!(shards[1].rows.iter().all(|row| row.last().unwrap() == "2"));
        let mut all: Vec<String> = shards.iter().flat_map(|s| s.rows.iter().map(|r| r[0].clone())).collect();
        all.sort_by_key(|v| v.parse::<usize>().unwrap());
        assert_eq!(all, (1..=12).map(|i| i.to_string()).collect::<Vec<_>>());
    }

    #[test]
    fn wrong_sizes() {
        let (h, r) = data(12);
        assert!(matches!(
            partition_rows(&h, &r, &plan(&[3, 4], 7)),
            Err(Error::SizeMismatch { requested: 7, available: 12 })
        ));
    }

    #[test]
    fn seed_determinism() {
        let (h, r) = data(30);
        let a = partition_rows(&h, &r, &plan(&[10, 20], 1)).unwrap();
        let b = partition_rows(&h, &r, &plan(&[10, 20], 1)).unwrap();
        let c = partition_rows(&h, &r, &plan(&[10, 20], 2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn event_targets() {
        let (h, r) = data(12);
        let mut p = plan(&[6, 6], 3);
        p.events = Some(EventTarget {
            censoring_var: "e".into(),
            censoring_level: 0.0,
            counts: vec![1, 3],
        });
        let shards = partition_rows(&h, &r, &p).unwrap();
        let events = |s: &Shard| s.rows.iter().filter(|row| row[1] == "1").count();
        assert_eq!((events(&shards[0]), events(&shards[1])), (1, 3));

        p.events.as_mut().unwrap().counts = vec![1, 1];
        assert!(matches!(partition_rows(&h, &r, &p), Err(Error::SizeMismatch { .. })));
    }
}
