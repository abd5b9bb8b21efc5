//! Line-delimited numeric files.
//!
//! Datasets are written as a header `dims x=<n> u=<m> gt=<0|1>` followed by
//! one comma-separated record per observation: `x`, `u` and, when `gt=1`,
//! the flattened `A` (row-major), `b`, `π`, `u_ts`, `u_ns`. Provenance and
//! trajectory ranges live in a JSON sidecar at `<path>.meta.json`.
//!
//! Null-space models start with `model x=<n> u=<m> phi=<Φ>`, then the
//! bandwidth, the `Φ` centres and the `m` rows of `W`. Constraint estimates
//! start with `estimate kind=<variant> dim=<U> rows=<k>` followed by the
//! variant's numbers: the rows of `Â` or `Λ̂` (the selection also stores the
//! link lengths first), or a shared feature map and each row's angle weights.
//!
//! Floats use Rust's shortest round-trip formatting, so reading a written
//! file reproduces every value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::arm::ArmModel;
use crate::constraint::{ConstraintEstimate, RbfAngleModel};
use crate::data::{Dataset, DatasetMeta, GroundTruth, Observation};
use crate::error::{Error, Result};
use crate::projection::ConstraintMatrix;
use crate::rbf::{RbfFeatureMap, RbfVectorModel};

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub(crate) fn push_floats<'a>(line: &mut String, values: impl IntoIterator<Item = &'a f64>) {
    for v in values {
        if !line.is_empty() {
            line.push(',');
        }
        write!(line, "{v:?}").expect("writing to a String cannot fail");
    }
}

pub(crate) fn parse_floats(path: &Path, line_no: usize, line: &str) -> Result<Vec<f64>> {
    line.split(',')
        .enumerate()
        .map(|(i, field)| {
            field.trim().parse::<f64>().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("field {}: {e} ({field:?})", i + 1),
            })
        })
        .collect()
}

pub(crate) fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parses `key=value` tokens after a leading tag.
pub(crate) fn header_fields<'a>(path: &Path, line: &'a str, tag: &str) -> Result<Vec<(&'a str, &'a str)>> {
    let mut tokens = line.split_whitespace();
    if tokens.next() != Some(tag) {
        return Err(parse_error(path, 1, format!("expected `{tag}` header, found {line:?}")));
    }
    tokens
        .map(|t| {
            t.split_once('=')
                .ok_or_else(|| parse_error(path, 1, format!("malformed header token {t:?}")))
        })
        .collect()
}

pub(crate) fn header_usize(path: &Path, fields: &[(&str, &str)], key: &str) -> Result<usize> {
    let raw = fields
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| parse_error(path, 1, format!("header lacks `{key}`")))?;
    raw.parse()
        .map_err(|_| parse_error(path, 1, format!("header `{key}` is not an integer: {raw:?}")))
}

fn observation_record(o: &Observation) -> String {
    let mut line = String::new();
    push_floats(&mut line, o.x.iter());
    push_floats(&mut line, o.u.iter());
    if let Some(gt) = &o.ground_truth {
        // nalgebra stores column-major; emit A row by row.
        let a = gt.a.matrix();
        for r in 0..a.nrows() {
            push_floats(&mut line, a.row(r).iter());
        }
        push_floats(&mut line, gt.b.iter());
        push_floats(&mut line, gt.pi.iter());
        push_floats(&mut line, gt.u_ts.iter());
        push_floats(&mut line, gt.u_ns.iter());
    }
    line
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    dataset.validate()?;
    let gt = dataset.has_ground_truth();
    if !gt && dataset.observations.iter().any(|o| o.ground_truth.is_some()) {
        return Err(Error::InvalidInput(
            "ground truth must be present on all observations or none".into(),
        ));
    }
    let mut out = format!(
        "dims x={} u={} gt={}\n",
        dataset.state_dim(),
        dataset.action_dim(),
        u8::from(gt)
    );
    for o in &dataset.observations {
        out.push_str(&observation_record(o));
        out.push('\n');
    }
    let mut meta = dataset.meta.clone();
    meta.n_observations = dataset.len();
    fs::write(path, out)?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

fn split_record(path: &Path, line_no: usize, vals: &[f64], nx: usize, nu: usize, gt: bool) -> Result<Observation> {
    let base = nx + nu;
    let bad_len = || parse_error(path, line_no, format!("record has {} fields", vals.len()));
    if !gt {
        if vals.len() != base {
            return Err(bad_len());
        }
        return Ok(Observation {
            x: DVector::from_column_slice(&vals[..nx]),
            u: DVector::from_column_slice(&vals[nx..]),
            ground_truth: None,
        });
    }
    // x, u, A (k·U), b (k), π, u_ts, u_ns (U each)
    let extra = vals.len().checked_sub(base + 3 * nu).ok_or_else(bad_len)?;
    if extra % (nu + 1) != 0 {
        return Err(bad_len());
    }
    let k = extra / (nu + 1);
    let mut at = 0;
    let mut take = |n: usize| {
        let s = &vals[at..at + n];
        at += n;
        s
    };
    let x = DVector::from_column_slice(take(nx));
    let u = DVector::from_column_slice(take(nu));
    let a = DMatrix::from_row_slice(k, nu, take(k * nu));
    let b = DVector::from_column_slice(take(k));
    let pi = DVector::from_column_slice(take(nu));
    let u_ts = DVector::from_column_slice(take(nu));
    let u_ns = DVector::from_column_slice(take(nu));
    Ok(Observation {
        x,
        u,
        ground_truth: Some(GroundTruth {
            a: ConstraintMatrix::new(a),
            b,
            pi,
            u_ts,
            u_ns,
        }),
    })
}

/// Reads a dataset and its sidecar. Fails without returning partial data on
/// any malformed or missing record.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let meta_path = sidecar_path(path);
    let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)
        .map_err(|e| parse_error(&meta_path, e.line(), e.to_string()))?;

    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| parse_error(path, 1, "empty file"))?;
    let fields = header_fields(path, header, "dims")?;
    let nx = header_usize(path, &fields, "x")?;
    let nu = header_usize(path, &fields, "u")?;
    let gt = match header_usize(path, &fields, "gt")? {
        0 => false,
        1 => true,
        other => return Err(parse_error(path, 1, format!("gt must be 0 or 1, got {other}"))),
    };

    let mut observations = Vec::with_capacity(meta.n_observations);
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.trim().is_empty() {
            return Err(parse_error(path, line_no, "empty record"));
        }
        let vals = parse_floats(path, line_no, line)?;
        observations.push(split_record(path, line_no, &vals, nx, nu, gt)?);
    }
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(parse_error(path, observations.len() + 1, "file is truncated mid-record"));
    }
    if observations.len() != meta.n_observations {
        return Err(parse_error(
            path,
            observations.len() + 1,
            format!(
                "expected {} records, found {}",
                meta.n_observations,
                observations.len()
            ),
        ));
    }
    let dataset = Dataset { observations, meta };
    dataset.validate()?;
    Ok(dataset)
}

fn float_line(values: impl IntoIterator<Item = f64>) -> String {
    let vals: Vec<f64> = values.into_iter().collect();
    let mut line = String::new();
    push_floats(&mut line, vals.iter());
    line.push('\n');
    line
}

fn push_matrix_rows(out: &mut String, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        out.push_str(&float_line(m.row(r).iter().copied()));
    }
}

fn push_feature_map(out: &mut String, map: &RbfFeatureMap) {
    out.push_str(&float_line([map.bandwidth()]));
    for c in map.centres() {
        out.push_str(&float_line(c.iter().copied()));
    }
}

/// Numeric lines of a file after its header, with 1-based line numbers.
struct Records<'a> {
    path: &'a Path,
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Records<'a> {
    fn new(path: &'a Path, text: &'a str) -> Result<(&'a str, Self)> {
        if !text.is_empty() && !text.ends_with('\n') {
            return Err(parse_error(path, text.lines().count(), "file is truncated mid-record"));
        }
        let mut lines = text.lines().enumerate();
        let header = lines.next().map(|(_, l)| l).ok_or_else(|| parse_error(path, 1, "empty file"))?;
        Ok((header, Self { path, lines }))
    }

    fn next(&mut self, expected_len: usize) -> Result<Vec<f64>> {
        let (i, line) = self
            .lines
            .next()
            .ok_or_else(|| parse_error(self.path, 0, "file ends before all records were read"))?;
        let vals = parse_floats(self.path, i + 1, line)?;
        if vals.len() != expected_len {
            return Err(parse_error(
                self.path,
                i + 1,
                format!("expected {expected_len} values, found {}", vals.len()),
            ));
        }
        Ok(vals)
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.next(cols)?);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }

    fn feature_map(&mut self, state_dim: usize, phi: usize) -> Result<RbfFeatureMap> {
        let bandwidth = self.next(1)?[0];
        let centres = (0..phi)
            .map(|_| self.next(state_dim).map(DVector::from_vec))
            .collect::<Result<Vec<_>>>()?;
        RbfFeatureMap::new(centres, bandwidth)
    }

    fn finish(mut self) -> Result<()> {
        match self.lines.next() {
            Some((i, _)) => Err(parse_error(self.path, i + 1, "unexpected trailing record")),
            None => Ok(()),
        }
    }
}

fn header_str<'a>(path: &Path, fields: &[(&str, &'a str)], key: &str) -> Result<&'a str> {
    fields
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| parse_error(path, 1, format!("header lacks `{key}`")))
}

pub fn format_model(model: &RbfVectorModel) -> String {
    let map = &model.features;
    let mut out = format!(
        "model x={} u={} phi={}\n",
        map.state_dim(),
        model.output_dim(),
        map.n_features()
    );
    push_feature_map(&mut out, map);
    push_matrix_rows(&mut out, &model.weights);
    out
}

pub fn write_model(model: &RbfVectorModel, path: &Path) -> Result<()> {
    fs::write(path, format_model(model))?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<RbfVectorModel> {
    let text = fs::read_to_string(path)?;
    let (header, mut records) = Records::new(path, &text)?;
    let fields = header_fields(path, header, "model")?;
    let nx = header_usize(path, &fields, "x")?;
    let nu = header_usize(path, &fields, "u")?;
    let phi = header_usize(path, &fields, "phi")?;
    let map = records.feature_map(nx, phi)?;
    let weights = records.matrix(nu, phi)?;
    records.finish()?;
    RbfVectorModel::new(map, weights)
}

pub fn format_estimate(estimate: &ConstraintEstimate) -> Result<String> {
    let dim = crate::projection::ConstraintField::dim(estimate);
    let mut out = format!(
        "estimate kind={} dim={dim} rows={}",
        estimate.method_name(),
        estimate.n_rows()
    );
    match estimate {
        ConstraintEstimate::FixedRows(a) => {
            out.push('\n');
            push_matrix_rows(&mut out, a.matrix());
        }
        ConstraintEstimate::Selection { lambda, arm } => {
            out.push('\n');
            out.push_str(&float_line(arm.link_lengths));
            push_matrix_rows(&mut out, lambda.matrix());
        }
        ConstraintEstimate::StateDependent { rows, .. } => {
            let Some(first) = rows.first() else {
                out.push_str(" x=0 phi=0\n");
                return Ok(out);
            };
            let map = &first.features;
            if rows.iter().any(|r| r.features != *map) {
                return Err(Error::InvalidInput(
                    "state-dependent rows must share one feature map to be written".into(),
                ));
            }
            out.push_str(&format!(" x={} phi={}\n", map.state_dim(), map.n_features()));
            push_feature_map(&mut out, map);
            for r in rows {
                push_matrix_rows(&mut out, &r.weights);
            }
        }
    }
    Ok(out)
}

pub fn write_estimate(estimate: &ConstraintEstimate, path: &Path) -> Result<()> {
    fs::write(path, format_estimate(estimate)?)?;
    Ok(())
}

pub fn read_estimate(path: &Path) -> Result<ConstraintEstimate> {
    let text = fs::read_to_string(path)?;
    let (header, mut records) = Records::new(path, &text)?;
    let fields = header_fields(path, header, "estimate")?;
    let dim = header_usize(path, &fields, "dim")?;
    let k = header_usize(path, &fields, "rows")?;
    if k > dim {
        return Err(parse_error(path, 1, format!("{k} rows exceed dimension {dim}")));
    }
    let estimate = match header_str(path, &fields, "kind")? {
        "fixed_rows" => ConstraintEstimate::FixedRows(ConstraintMatrix::new(records.matrix(k, dim)?)),
        "selection" => {
            let links = records.next(3)?;
            let arm = ArmModel::new([links[0], links[1], links[2]])?;
            ConstraintEstimate::Selection {
                lambda: ConstraintMatrix::new(records.matrix(k, dim)?),
                arm,
            }
        }
        "state_dependent" => {
            let nx = header_usize(path, &fields, "x")?;
            let phi = header_usize(path, &fields, "phi")?;
            let mut rows = Vec::with_capacity(k);
            if k > 0 {
                let map = records.feature_map(nx, phi)?;
                for s in 0..k {
                    let local_dim = dim - s;
                    let w = records.matrix(local_dim - 1, phi)?;
                    rows.push(RbfAngleModel::new(map.clone(), w, local_dim)?);
                }
            }
            ConstraintEstimate::StateDependent { dim, rows }
        }
        other => return Err(parse_error(path, 1, format!("unknown estimate kind {other:?}"))),
    };
    records.finish()?;
    Ok(estimate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm::{ArmModel, SelectionMatrix};
    use crate::data::{generate_arm_trajectories, generate_toy_dataset};
    use crate::policies::PolicySpec;

    fn tmp(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("nsp-io-{}-{name}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir.join("data.txt")
    }

    fn assert_bit_equal(a: &Dataset, b: &Dataset) {
        assert_eq!(a.meta, b.meta);
        assert_eq!(a.len(), b.len());
        let flat = |d: &Dataset| -> Vec<u64> {
            d.observations
                .iter()
                .flat_map(|o| {
                    let mut v: Vec<f64> = o.x.iter().chain(o.u.iter()).copied().collect();
                    if let Some(g) = &o.ground_truth {
                        v.extend(g.a.matrix().iter());
                        v.extend(g.b.iter().chain(g.pi.iter()).chain(g.u_ts.iter()).chain(g.u_ns.iter()));
                    }
                    v
                })
                .map(f64::to_bits)
                .collect()
        };
        assert_eq!(flat(a), flat(b));
    }

    #[test]
    fn sidecar_floats_round_trip_exactly() {
        let p = tmp("sidecar");
        for seed in 0..50 {
            let d = generate_toy_dataset(&PolicySpec::linear(), 1, seed).unwrap();
            write_dataset(&d, &p).unwrap();
            assert_eq!(read_dataset(&p).unwrap().meta, d.meta, "seed {seed}");
        }
    }

    #[test]
    fn toy_round_trip() {
        let d = generate_toy_dataset(&PolicySpec::limit_cycle(), 40, 5).unwrap();
        let p = tmp("toy");
        write_dataset(&d, &p).unwrap();
        let back = read_dataset(&p).unwrap();
        assert_bit_equal(&d, &back);
        assert_eq!(d, back);
    }

    #[test]
    fn arm_round_trip_with_trajectories() {
        let d = generate_arm_trajectories(&SelectionMatrix::z_theta(), 3, 6, 0.1, 2, &ArmModel::default()).unwrap();
        let p = tmp("arm");
        write_dataset(&d, &p).unwrap();
        let back = read_dataset(&p).unwrap();
        assert_eq!(back.meta.trajectories, d.meta.trajectories);
        assert_bit_equal(&d, &back);
    }

    #[test]
    fn header_format() {
        let d = generate_toy_dataset(&PolicySpec::linear(), 2, 5).unwrap();
        let p = tmp("header");
        write_dataset(&d, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("dims x=2 u=2 gt=1"));
        // x(2) u(2) A(1x2) b(1) pi(2) u_ts(2) u_ns(2)
        assert_eq!(lines.next().unwrap().split(',').count(), 13);
    }

    #[test]
    fn truncated_files_are_rejected() {
        let d = generate_toy_dataset(&PolicySpec::sinusoidal(), 10, 1).unwrap();
        let p = tmp("trunc");
        write_dataset(&d, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();

        // Cut mid-record.
        fs::write(&p, &text[..text.len() - 7]).unwrap();
        assert!(matches!(read_dataset(&p), Err(Error::Parse { .. })));

        // Drop whole trailing records.
        let keep: Vec<&str> = text.lines().take(6).collect();
        fs::write(&p, keep.join("\n") + "\n").unwrap();
        match read_dataset(&p) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 6);
                assert!(message.contains("expected 10 records"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    fn sample_map() -> RbfFeatureMap {
        let centres = vec![
            DVector::from_vec(vec![0.1, -0.3]),
            DVector::from_vec(vec![0.7, 0.2]),
            DVector::from_vec(vec![-0.4, 0.9]),
        ];
        RbfFeatureMap::new(centres, 0.37).unwrap()
    }

    #[test]
    fn model_round_trip() {
        let w = DMatrix::from_fn(2, 3, |i, j| (i as f64 + 1.0) / (j as f64 + 3.0) - 0.1);
        let model = RbfVectorModel::new(sample_map(), w).unwrap();
        let p = tmp("model");
        write_model(&model, &p).unwrap();
        let back = read_model(&p).unwrap();
        assert_eq!(back, model);
        assert!(fs::read_to_string(&p).unwrap().starts_with("model x=2 u=2 phi=3\n"));
    }

    #[test]
    fn estimate_round_trips() {
        let p = tmp("estimate");
        let fixed = ConstraintEstimate::FixedRows(ConstraintMatrix::new(DMatrix::from_row_slice(1, 2, &[0.6, 0.8])));
        let selection = ConstraintEstimate::Selection {
            lambda: ConstraintMatrix::new(DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0])),
            arm: ArmModel::new([1.0, 0.5, 0.25]).unwrap(),
        };
        let rows = (0..2)
            .map(|s| {
                let w = DMatrix::from_fn(2 - s, 3, |i, j| 0.3 * i as f64 - 0.2 * j as f64 + s as f64);
                RbfAngleModel::new(sample_map(), w, 3 - s).unwrap()
            })
            .collect();
        let state = ConstraintEstimate::StateDependent { dim: 3, rows };
        let empty = ConstraintEstimate::StateDependent { dim: 3, rows: vec![] };
        for est in [fixed, selection, state, empty] {
            write_estimate(&est, &p).unwrap();
            assert_eq!(read_estimate(&p).unwrap(), est);
        }
    }

    #[test]
    fn estimate_with_missing_rows_is_rejected() {
        let p = tmp("estimate-short");
        fs::write(&p, "estimate kind=fixed_rows dim=3 rows=2\n1.0,0.0,0.0\n").unwrap();
        assert!(matches!(read_estimate(&p), Err(Error::Parse { .. })));
        fs::write(&p, "estimate kind=mystery dim=3 rows=0\n").unwrap();
        assert!(matches!(read_estimate(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn garbage_field_reports_line() {
        let d = generate_toy_dataset(&PolicySpec::sinusoidal(), 3, 1).unwrap();
        let p = tmp("garbage");
        write_dataset(&d, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap().replacen(",", ",abc,", 2);
        fs::write(&p, text).unwrap();
        match read_dataset(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
