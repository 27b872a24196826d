//! Summaries over directories of run logs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::evalstats::{bootstrap_ci, iqm, mean, normalized_score, seed_finals, Statistic, DEFAULT_RESAMPLES};
use crate::rng::{stream, Stream};
use crate::runner::{series, RunLog, RunMeta, CSV_HEADER, LOG_SCHEMA_VERSION};

pub const SUMMARY_HEADER: &str = "task,method,mode,seeds,final,ci_lo,ci_hi,iqm,normalized,agg_minus_indiv";

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub task: String,
    pub method: String,
    /// `agg`, `indiv`, or a tandem role.
    pub mode: String,
    pub seeds: usize,
    pub final_score: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub iqm: f64,
    pub normalized: f64,
    /// Same value on every row of a `(task, method)` group.
    pub agg_minus_indiv: f64,
}

struct Group {
    meta: RunMeta,
    logs: Vec<(u64, RunLog)>,
}

fn is_seed_csv(p: &Path) -> bool {
    p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("seed_") && n.ends_with(".csv"))
}

fn collect_dirs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    if entries.iter().any(|p| p.file_name() == Some("meta.json".as_ref()) || is_seed_csv(p)) {
        out.push(dir.to_path_buf());
    }
    for p in entries {
        if p.is_dir() {
            collect_dirs(&p, out)?;
        }
    }
    Ok(())
}

/// Read every run directory below `root`. Any file that does not follow
/// the log schema is reported together in one `Schema` error.
fn load_groups(roots: &[PathBuf]) -> Result<BTreeMap<(String, String), Group>> {
    let mut dirs = Vec::new();
    for root in roots {
        collect_dirs(root, &mut dirs)?;
    }
    dirs.sort();
    dirs.dedup();
    let mut bad = Vec::new();
    let mut groups: BTreeMap<(String, String), Group> = BTreeMap::new();
    for dir in dirs {
        let meta_path = dir.join("meta.json");
        let meta: Option<RunMeta> = std::fs::read_to_string(&meta_path)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .filter(|m: &RunMeta| m.schema_version == LOG_SCHEMA_VERSION);
        if meta.is_none() {
            bad.push(meta_path);
        }
        let mut csvs: Vec<PathBuf> = std::fs::read_dir(&dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| is_seed_csv(p)).collect();
        csvs.sort();
        let mut logs = Vec::new();
        for path in csvs {
            let text = std::fs::read_to_string(&path)?;
            let seed = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s["seed_".len()..].parse::<u64>().ok());
            match (seed, text.lines().next() == Some(CSV_HEADER), RunLog::from_csv(&text)) {
                (Some(seed), true, Ok(log)) => logs.push((seed, log)),
                _ => bad.push(path),
            }
        }
        if let Some(meta) = meta {
            let key = (meta.task.clone(), meta.method.clone());
            let g = groups.entry(key).or_insert_with(|| Group { meta, logs: Vec::new() });
            g.logs.extend(logs);
        }
    }
    if !bad.is_empty() {
        return Err(Error::Schema(bad));
    }
    for g in groups.values_mut() {
        g.logs.sort_by_key(|(seed, _)| *seed);
    }
    Ok(groups)
}

fn mode_series(mode: &str) -> &str {
    match mode {
        "agg" => series::EVAL_AGG,
        "indiv" => series::EVAL_INDIV,
        other => other,
    }
}

pub fn summarize(root: &Path) -> Result<Vec<SummaryRow>> {
    summarize_all(&[root.to_path_buf()])
}

/// Summary rows for every run below any of `roots`, ordered by task,
/// method, then mode.
pub fn summarize_all(roots: &[PathBuf]) -> Result<Vec<SummaryRow>> {
    let groups = load_groups(roots)?;
    let mut rows = Vec::new();
    for ((task, method), g) in &groups {
        let k = g.meta.final_window;
        let usable: Vec<&RunLog> = g
            .logs
            .iter()
            .filter(|(seed, log)| {
                let keep = !log.diverged();
                if !keep {
                    log::warn!("{task}/{method}: seed {seed} diverged and is left out of the summary");
                }
                keep
            })
            .map(|(_, l)| l)
            .collect();
        if usable.is_empty() {
            log::warn!("{task}/{method}: no usable seeds");
            continue;
        }
        let mut modes = vec!["agg", "indiv"];
        for role in ["active", "passive"] {
            if usable.iter().all(|l| !l.series(role).is_empty()) {
                modes.push(role);
            }
        }
        let mut finals = BTreeMap::new();
        for &mode in &modes {
            let per_seed: Vec<Vec<f64>> = usable.iter().map(|l| l.series(mode_series(mode))).collect();
            let shortest = per_seed.iter().map(Vec::len).min().unwrap_or(0);
            if shortest < k {
                log::warn!("{task}/{method}: only {shortest} evaluation points, final window shrinks from {k}");
            }
            finals.insert(mode, seed_finals(&per_seed, k.min(shortest))?);
        }
        let gap = mean(&finals["agg"])? - mean(&finals["indiv"])?;
        for &mode in &modes {
            let v = &finals[mode];
            let final_score = mean(v)?;
            let (ci_lo, ci_hi) = bootstrap_ci(v, DEFAULT_RESAMPLES, 0.95, &mut stream(0, Stream::Eval), Statistic::Mean)?;
            rows.push(SummaryRow {
                task: task.clone(),
                method: method.clone(),
                mode: mode.to_string(),
                seeds: v.len(),
                final_score,
                ci_lo,
                ci_hi,
                iqm: iqm(v)?,
                normalized: normalized_score(final_score, g.meta.random_ref, g.meta.upper_ref)?,
                agg_minus_indiv: gap,
            });
        }
    }
    Ok(rows)
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.task, r.method, r.mode, r.seeds, r.final_score, r.ci_lo, r.ci_hi, r.iqm, r.normalized, r.agg_minus_indiv
        )
        .expect("write to string");
    }
    out
}

/// Summarise `roots` and write the table to `out`.
pub fn write_report(roots: &[PathBuf], out: &Path) -> Result<Vec<SummaryRow>> {
    let rows = summarize_all(roots)?;
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(out, summary_csv(&rows))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Algorithm, RunConfig};
    use crate::envs::EnvConfig;
    use crate::runner::{write_log, write_meta};

    fn fake_log(seed: u64, agg: f64, indiv: f64, points: u64) -> RunLog {
        let mut log = RunLog::default();
        for s in 0..points {
            log.push(s * 10, seed, series::EVAL_AGG, agg);
            log.push(s * 10, seed, series::EVAL_INDIV, indiv);
        }
        log
    }

    fn config() -> RunConfig {
        let mut c = RunConfig::new(Algorithm::BootDqn, EnvConfig::chain(5), 100);
        c.eval.final_window = Some(3);
        c
    }

    #[test]
    fn summary_values() {
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path().join("a");
        write_meta(&run, &config()).unwrap();
        write_log(&run, 0, &fake_log(0, 1.0, 0.5, 5)).unwrap();
        write_log(&run, 1, &fake_log(1, 1.0, 0.5, 5)).unwrap();
        let rows = summarize(dir.path()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].mode, "agg");
        assert_eq!(rows[0].final_score, 1.0);
        assert_eq!((rows[0].ci_lo, rows[0].ci_hi), (1.0, 1.0));
        assert_eq!(rows[1].final_score, 0.5);
        assert_eq!(rows[0].agg_minus_indiv, 0.5);
        assert_eq!(rows[1].agg_minus_indiv, 0.5);
        let text = summary_csv(&rows);
        assert!(text.starts_with(SUMMARY_HEADER));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn bad_files_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path().join("a");
        write_meta(&run, &config()).unwrap();
        write_log(&run, 0, &fake_log(0, 1.0, 0.5, 5)).unwrap();
        std::fs::write(run.join("seed_1.csv"), "step,value\n0,1\n").unwrap();
        std::fs::write(run.join("seed_2.csv"), "step,seed,series,value\n0,2,eval_agg,abc\n").unwrap();
        match summarize(dir.path()) {
            Err(Error::Schema(files)) => {
                assert_eq!(files.len(), 2);
                assert!(files[0].ends_with("seed_1.csv") && files[1].ends_with("seed_2.csv"));
            }
            other => panic!("expected a schema error, got {other:?}"),
        }
    }

    #[test]
    fn diverged_seeds_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path().join("a");
        write_meta(&run, &config()).unwrap();
        write_log(&run, 0, &fake_log(0, 2.0, 2.0, 5)).unwrap();
        let mut bad = fake_log(1, 0.0, 0.0, 1);
        bad.push(10, 1, series::DIVERGED, 10.0);
        write_log(&run, 1, &bad).unwrap();
        let rows = summarize(dir.path()).unwrap();
        assert_eq!(rows[0].seeds, 1);
        assert_eq!(rows[0].final_score, 2.0);
    }
}
