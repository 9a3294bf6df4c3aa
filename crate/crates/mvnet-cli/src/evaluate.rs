//! The evaluate command: score a manifest and write a CSV report.
//!
//! One header line, one comma-separated row per utterance, and a final
//! MEAN row. A row that cannot be scored (unreadable file, length
//! mismatch, degenerate metric) is written with NA fields, detailed on
//! stderr, excluded from the means, and makes the whole command exit 1.

use std::fmt::Write as _;
use std::path::Path;

use mvnet_core::model::MvNet;
use mvnet_core::tensor::NoGradGuard;
use mvnet_core::{metrics, Tensor};

use crate::checkpoint::{self, Checkpoint};
use crate::fail::{input, run, Fail};
use crate::manifest::{self, Row};
use crate::wav;

pub enum Source<'a> {
    /// Enhance each noisy file through a checkpointed network.
    Model(&'a Path),
    /// Score already-enhanced files named `<id>.wav` in this directory.
    Directory(&'a Path),
}

const SEG_FRAME: usize = 400;

struct Scored {
    id: String,
    si_snr: f64,
    si_snri: f64,
    seg_snr: f64,
    simi: Option<f64>,
}

fn score_row(
    r: &Row,
    net: Option<&MvNet>,
    enhanced_dir: Option<&Path>,
) -> Result<Scored, Fail> {
    let clean = wav::read(&r.clean)?;
    let noisy = wav::read(&r.noisy)?;
    if clean.len() != noisy.len() {
        return Err(input(format!(
            "clean and noisy lengths differ ({} vs {})",
            clean.len(),
            noisy.len()
        )));
    }
    let enhanced = match (net, enhanced_dir) {
        (Some(net), _) => net.enhance_waveform(&noisy).map_err(Fail::from)?,
        (None, Some(dir)) => wav::read(&dir.join(format!("{}.wav", r.id)))?,
        (None, None) => unreachable!("evaluate always has a source"),
    };
    if enhanced.len() != clean.len() {
        return Err(input(format!(
            "enhanced length {} does not match clean length {}",
            enhanced.len(),
            clean.len()
        )));
    }

    let si_snr = metrics::si_snr_db(&enhanced, &clean);
    let si_snri = metrics::si_snr_improvement_db(&enhanced, &noisy, &clean);
    let seg_snr = metrics::seg_snr_db(&enhanced, &clean, SEG_FRAME);
    let simi = match net {
        Some(net) => {
            let _guard = NoGradGuard::new();
            let est = Tensor::from_vec(enhanced.clone(), &[enhanced.len()]).map_err(Fail::from)?;
            let cln = Tensor::from_vec(clean.clone(), &[clean.len()]).map_err(Fail::from)?;
            let e1 = net.embed_wave(&est).map_err(Fail::from)?;
            let e2 = net.embed_wave(&cln).map_err(Fail::from)?;
            Some(metrics::simi(&e1.to_vec(), &e2.to_vec()))
        }
        None => None,
    };
    for (name, v) in [("si_snr", si_snr), ("si_snri", si_snri), ("seg_snr", seg_snr)] {
        if !v.is_finite() {
            return Err(run(format!("metric {name} is undefined for this utterance")));
        }
    }
    if let Some(s) = simi {
        if !s.is_finite() {
            return Err(run("embedding similarity is undefined for this utterance"));
        }
    }
    Ok(Scored { id: r.id.clone(), si_snr, si_snri, seg_snr, simi })
}

fn echo_config(report: &Path, manifest_path: &Path, source: &Source, ckpt: Option<&Checkpoint>) -> Result<(), Fail> {
    let mut s = String::new();
    let _ = writeln!(s, "command=evaluate");
    let _ = writeln!(s, "manifest={}", manifest_path.display());
    match source {
        Source::Model(p) => {
            let _ = writeln!(s, "ckpt={}", p.display());
        }
        Source::Directory(p) => {
            let _ = writeln!(s, "enhanced={}", p.display());
        }
    }
    let _ = writeln!(s, "report={}", report.display());
    let _ = writeln!(s, "seg_snr.frame={SEG_FRAME}");
    if let Some(ck) = ckpt {
        for (k, v) in &ck.config {
            let _ = writeln!(s, "model.{k}={v}");
        }
    }
    let mut name = report.file_name().unwrap_or_default().to_os_string();
    name.push(".config");
    wav::atomic_write(&report.with_file_name(name), s.as_bytes())
}

fn fmt_simi(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.6}"),
        None => "NA".into(),
    }
}

pub fn run_evaluate(manifest_path: &Path, source: Source, report: &Path) -> Result<(), Fail> {
    let rows = manifest::read(manifest_path)?;
    let (net, ckpt, enhanced_dir) = match &source {
        Source::Model(p) => {
            let ck = Checkpoint::read(p)?;
            let net = checkpoint::load_model(&ck)?;
            (Some(net), Some(ck), None)
        }
        Source::Directory(d) => (None, None, Some(*d)),
    };
    echo_config(report, manifest_path, &source, ckpt.as_ref())?;

    let mut csv = String::from("id,si_snr_db,si_snri_db,seg_snr_db,simi\n");
    let mut ok: Vec<Scored> = Vec::new();
    let mut failures = 0usize;
    for r in &rows {
        match score_row(r, net.as_ref(), enhanced_dir) {
            Ok(s) => {
                let _ = writeln!(
                    csv,
                    "{},{:.6},{:.6},{:.6},{}",
                    s.id,
                    s.si_snr,
                    s.si_snri,
                    s.seg_snr,
                    fmt_simi(s.simi)
                );
                ok.push(s);
            }
            Err(e) => {
                failures += 1;
                eprintln!("row {}: {}", r.id, e.msg);
                let _ = writeln!(csv, "{},NA,NA,NA,NA", r.id);
            }
        }
    }

    if !ok.is_empty() {
        let n = ok.len() as f64;
        let mean = |f: fn(&Scored) -> f64| ok.iter().map(f).sum::<f64>() / n;
        let simi_vals: Vec<f64> = ok.iter().filter_map(|s| s.simi).collect();
        let simi_mean = if simi_vals.is_empty() {
            None
        } else {
            Some(simi_vals.iter().sum::<f64>() / simi_vals.len() as f64)
        };
        let _ = writeln!(
            csv,
            "MEAN,{:.6},{:.6},{:.6},{}",
            mean(|s| s.si_snr),
            mean(|s| s.si_snri),
            mean(|s| s.seg_snr),
            fmt_simi(simi_mean)
        );
    } else {
        let _ = writeln!(csv, "MEAN,NA,NA,NA,NA");
    }
    wav::atomic_write(report, csv.as_bytes())?;
    println!(
        "scored {}/{} utterances into {}",
        ok.len(),
        rows.len(),
        report.display()
    );
    if failures > 0 {
        return Err(run(format!("{failures} of {} rows failed to score", rows.len())));
    }
    Ok(())
}

/// Reads the MEAN row back out of a report (used by tests and summaries).
pub fn read_mean(report: &Path) -> Result<(f64, f64, f64, Option<f64>), Fail> {
    let text = std::fs::read_to_string(report)
        .map_err(|e| input(format!("cannot read {}: {e}", report.display())))?;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("MEAN,") {
            let f: Vec<&str> = rest.split(',').collect();
            if f.len() != 4 {
                return Err(input(format!("malformed MEAN row in {}", report.display())));
            }
            let num = |s: &str| -> Result<f64, Fail> {
                s.parse().map_err(|_| input(format!("bad MEAN value {s:?}")))
            };
            let simi = if f[3] == "NA" { None } else { Some(num(f[3])?) };
            return Ok((num(f[0])?, num(f[1])?, num(f[2])?, simi));
        }
    }
    Err(input(format!("{} has no MEAN row", report.display())))
}
