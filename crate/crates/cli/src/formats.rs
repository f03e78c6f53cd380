//! Text formats: datasets, parameter dumps and the CSV outputs.
//!
//! Floats are written with Rust's `Display`, which is locale-independent,
//! never uses an exponent and round-trips exactly through `parse`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use gradmatch_core::GipTrace;
use gradmatch_core::{Domain, DomainDataset, Example, HistoryRow, Layout, ParamVector, Split, TheoremProbe};

use crate::CliError;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// `feature_dim=<d> split=<train|test>` header, then `domain_id,label,f1,...,fd` per example.
pub fn format_dataset(d: &DomainDataset) -> String {
    let mut out = format!("feature_dim={} split={}\n", d.feature_dim(), d.split().as_str());
    for dom in d.domains() {
        for ex in &dom.examples {
            write!(out, "{},{}", dom.id, ex.label).unwrap();
            for f in &ex.features {
                write!(out, ",{f}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}

pub fn parse_dataset(text: &str) -> Result<DomainDataset, CliError> {
    let bad = |line: usize, msg: String| CliError::Config(format!("dataset line {line}: {msg}"));
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let (hl, header) = lines.next().ok_or_else(|| CliError::Config("dataset is empty".into()))?;
    let mut dim = None;
    let mut split = None;
    for tok in header.split_whitespace() {
        match tok.split_once('=') {
            Some(("feature_dim", v)) => {
                dim = Some(v.parse::<usize>().map_err(|e| bad(hl, format!("feature_dim: {e}")))?)
            }
            Some(("split", "train")) => split = Some(Split::Train),
            Some(("split", "test")) => split = Some(Split::Test),
            _ => return Err(bad(hl, format!("unexpected header token `{tok}`"))),
        }
    }
    let (dim, split) = match (dim, split) {
        (Some(d), Some(s)) => (d, s),
        _ => return Err(bad(hl, "header needs feature_dim=<d> and split=<train|test>".into())),
    };
    let mut domains: Vec<Domain> = Vec::new();
    for (ln, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != dim + 2 {
            return Err(bad(ln, format!("expected {} fields, found {}", dim + 2, fields.len())));
        }
        let id: u32 = fields[0].parse().map_err(|e| bad(ln, format!("domain id: {e}")))?;
        let label: u8 = fields[1].parse().map_err(|e| bad(ln, format!("label: {e}")))?;
        if label > 1 {
            return Err(bad(ln, format!("label {label} is not 0 or 1")));
        }
        let features = fields[2..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| bad(ln, format!("feature `{f}`: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let ex = Example::new(features, label);
        match domains.iter_mut().find(|d| d.id == id) {
            Some(d) => d.examples.push(ex),
            None => domains.push(Domain { id, examples: vec![ex] }),
        }
    }
    Ok(DomainDataset::new(dim, split, domains)?)
}

/// Header of `name_start_end` tokens, then one value per line.
pub fn format_params(p: &ParamVector) -> String {
    let header: Vec<String> =
        p.layout.blocks().iter().map(|(name, r)| format!("{name}_{}_{}", r.start, r.end)).collect();
    let mut out = header.join(" ");
    out.push('\n');
    for v in &p.values {
        writeln!(out, "{v}").unwrap();
    }
    out
}

pub fn parse_params(text: &str) -> Result<ParamVector, CliError> {
    let bad = |msg: String| CliError::Config(format!("params: {msg}"));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let mut sizes: Vec<(&'static str, usize)> = Vec::new();
    let mut next = 0;
    for tok in header.split_whitespace() {
        let mut parts = tok.rsplitn(3, '_');
        let (end, start, name) = match (parts.next(), parts.next(), parts.next()) {
            (Some(e), Some(s), Some(n)) => (e, s, n),
            _ => return Err(bad(format!("bad layout token `{tok}`"))),
        };
        let start: usize = start.parse().map_err(|_| bad(format!("bad start in `{tok}`")))?;
        let end: usize = end.parse().map_err(|_| bad(format!("bad end in `{tok}`")))?;
        if start != next || end < start {
            return Err(bad(format!("block `{tok}` is not contiguous")));
        }
        next = end;
        sizes.push((static_name(name), end - start));
    }
    let values = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse::<f64>().map_err(|e| bad(format!("value `{l}`: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ParamVector::new(values, Layout::new(&sizes))?)
}

fn static_name(name: &str) -> &'static str {
    ["W", "b", "W1", "b1", "w2", "b2"].into_iter().find(|n| *n == name).unwrap_or("block")
}

pub fn format_history(rows: &[HistoryRow], with_gip: bool) -> String {
    let mut out = String::from("iter,train_loss,train_acc,test_acc");
    if with_gip {
        out.push_str(",gip_pre,gip_post");
    }
    out.push('\n');
    for r in rows {
        write!(out, "{},{},{},{}", r.iter, r.train_loss, r.train_acc, opt(r.test_acc)).unwrap();
        if with_gip {
            write!(out, ",{},{}", opt(r.gip_pre), opt(r.gip_post)).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn format_gip_trace(t: &GipTrace) -> String {
    let mut out = String::from("iter,fish_pre,fish_post,erm_pre,erm_post\n");
    for r in &t.records {
        writeln!(out, "{},{},{},{},{}", r.iter, r.fish_pre, r.fish_post, r.erm_pre, r.erm_post).unwrap();
    }
    out
}

pub fn format_theorem(p: &TheoremProbe) -> String {
    let mut out = String::from("alpha,cosine,gf_norm,gg_norm,residual_norm\n");
    for r in &p.rows {
        writeln!(out, "{},{},{},{},{}", r.alpha, opt(r.cosine), r.gf_norm, r.gg_norm, r.residual_norm).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use gradmatch_core::{make_linear_benchmark, make_vecsprites, GradEngine, ModelFamily, VecSpritesConfig};

    #[test]
    fn dataset_round_trip_is_exact() {
        let (tr, te) = make_vecsprites(&VecSpritesConfig::new(3, 4, 8)).unwrap();
        for d in [tr, te] {
            let text = format_dataset(&d);
            assert_eq!(parse_dataset(&text).unwrap(), d);
        }
        let (lin, _) = make_linear_benchmark(100).unwrap();
        assert!(format_dataset(&lin).starts_with("feature_dim=4 split=train\n1,0,0,0,0,0\n"));
    }

    #[test]
    fn dataset_errors_name_the_line() {
        let err = parse_dataset("feature_dim=2 split=train\n1,0,0.5,1\n1,1,0.5\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(parse_dataset("feature_dim=2\n").is_err());
        assert!(parse_dataset("feature_dim=1 split=train\n1,2,0\n").is_err());
        assert!(parse_dataset("").is_err());
    }

    #[test]
    fn params_round_trip() {
        let e = GradEngine::new(ModelFamily::Mlp1 { hidden: 2 }, 3).unwrap();
        let p = e.init(4);
        let text = format_params(&p);
        assert!(text.starts_with("W1_0_6 b1_6_8 w2_8_10 b2_10_11\n"));
        assert_eq!(parse_params(&text).unwrap(), p);
        assert!(parse_params("W_0_2 b_3_4\n0\n0\n0\n").is_err());
    }

    #[test]
    fn history_columns() {
        let rows = [HistoryRow {
            iter: 0,
            train_loss: 0.5,
            train_acc: 1.0,
            test_acc: Some(0.25),
            gip_pre: None,
            gip_post: Some(0.1),
        }];
        assert_eq!(format_history(&rows, false), "iter,train_loss,train_acc,test_acc\n0,0.5,1,0.25\n");
        assert_eq!(
            format_history(&rows, true),
            "iter,train_loss,train_acc,test_acc,gip_pre,gip_post\n0,0.5,1,0.25,,0.1\n"
        );
    }

    #[test]
    fn floats_never_use_exponents() {
        assert_eq!(format!("{}", 1e-20f64), "0.00000000000000000001");
        assert_eq!("0.00000000000000000001".parse::<f64>().unwrap(), 1e-20);
    }
}
