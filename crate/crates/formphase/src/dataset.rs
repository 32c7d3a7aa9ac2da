//! Time-series container and its CSV representation.
//!
//! A dataset is a list of segments (independent recordings of the same
//! system). Each segment carries strictly increasing timestamps, state
//! samples, and optionally velocity samples and ground-truth phase labels.
//!
//! The CSV layout is one row per sample:
//! `segment_id,t,x_0..x_{n-1}[,dx_0..dx_{n-1}][,true_phase]`, with floats in
//! round-trip decimal form. Lines starting with `#` before the header are
//! metadata; a `# config <json>` line carries the generating configuration
//! verbatim.

use nalgebra::DVector;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numeric::fmt_g17;

/// One contiguous recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub velocities: Option<Vec<DVector<f64>>>,
    pub true_phase: Option<Vec<f64>>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn validate(&self, dim: usize, index: usize) -> Result<()> {
        let n = self.times.len();
        if self.states.len() != n {
            return Err(Error::Parse(format!(
                "segment {index}: {} states for {n} timestamps",
                self.states.len()
            )));
        }
        for w in self.times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Parse(format!(
                    "segment {index}: timestamps not strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        for s in &self.states {
            if s.len() != dim {
                return Err(Error::Parse(format!(
                    "segment {index}: state of dimension {} in a dataset of dimension {dim}",
                    s.len()
                )));
            }
        }
        if let Some(v) = &self.velocities {
            if v.len() != n || v.iter().any(|x| x.len() != dim) {
                return Err(Error::Parse(format!(
                    "segment {index}: velocity shape mismatch"
                )));
            }
        }
        if let Some(p) = &self.true_phase {
            if p.len() != n {
                return Err(Error::Parse(format!(
                    "segment {index}: {} phase labels for {n} samples",
                    p.len()
                )));
            }
        }
        Ok(())
    }
}

/// A collection of segments with a common state dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeSeriesDataset {
    pub dim: usize,
    pub segments: Vec<Segment>,
    /// Generating configuration carried verbatim (JSON), if any.
    pub config_json: Option<String>,
}

impl TimeSeriesDataset {
    pub fn new(dim: usize, segments: Vec<Segment>) -> Result<Self> {
        let ds = TimeSeriesDataset {
            dim,
            segments,
            config_json: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, seg) in self.segments.iter().enumerate() {
            seg.validate(self.dim, i)?;
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }

    pub fn has_velocities(&self) -> bool {
        !self.segments.is_empty() && self.segments.iter().all(|s| s.velocities.is_some())
    }

    pub fn has_true_phase(&self) -> bool {
        !self.segments.is_empty() && self.segments.iter().all(|s| s.true_phase.is_some())
    }

    /// All state samples in segment order.
    pub fn all_states(&self) -> impl Iterator<Item = &DVector<f64>> {
        self.segments.iter().flat_map(|s| s.states.iter())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        if let Some(cfg) = &self.config_json {
            writeln!(w, "# config {cfg}")?;
        }
        let with_vel = self.has_velocities();
        let with_phase = self.has_true_phase();
        let mut header = String::from("segment_id,t");
        for i in 0..self.dim {
            header.push_str(&format!(",x_{i}"));
        }
        if with_vel {
            for i in 0..self.dim {
                header.push_str(&format!(",dx_{i}"));
            }
        }
        if with_phase {
            header.push_str(",true_phase");
        }
        writeln!(w, "{header}")?;
        let mut line = String::new();
        for (sid, seg) in self.segments.iter().enumerate() {
            for k in 0..seg.len() {
                line.clear();
                line.push_str(&format!("{sid},{}", fmt_g17(seg.times[k])));
                for v in seg.states[k].iter() {
                    line.push(',');
                    line.push_str(&fmt_g17(*v));
                }
                if with_vel {
                    for v in seg.velocities.as_ref().unwrap()[k].iter() {
                        line.push(',');
                        line.push_str(&fmt_g17(*v));
                    }
                }
                if with_phase {
                    line.push(',');
                    line.push_str(&fmt_g17(seg.true_phase.as_ref().unwrap()[k]));
                }
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }

    pub fn save_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn read_csv_str(text: &str) -> Result<Self> {
        let mut config_json = None;
        let mut body_start = 0;
        for line in text.lines() {
            let trimmed = line.trim_start();
            if trimmed.starts_with('#') {
                let meta = trimmed.trim_start_matches('#').trim_start();
                if let Some(rest) = meta.strip_prefix("config ") {
                    config_json = Some(rest.trim().to_string());
                }
                body_start += line.len() + 1;
            } else {
                break;
            }
        }
        let body = &text[body_start.min(text.len())..];

        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(body.as_bytes());

        let headers = reader
            .headers()
            .map_err(|e| Error::Parse(e.to_string()))?
            .clone();
        let cols: Vec<&str> = headers.iter().collect();
        if cols.len() < 3 || cols[0] != "segment_id" || cols[1] != "t" {
            return Err(Error::Parse(
                "header must start with segment_id,t,x_0,...".into(),
            ));
        }
        let mut dim = 0;
        let mut idx = 2;
        while idx < cols.len() && cols[idx] == format!("x_{}", idx - 2) {
            dim += 1;
            idx += 1;
        }
        if dim == 0 {
            return Err(Error::Parse("no x_0 column".into()));
        }
        let mut with_vel = false;
        if idx < cols.len() && cols[idx] == "dx_0" {
            for i in 0..dim {
                if idx >= cols.len() || cols[idx] != format!("dx_{i}") {
                    return Err(Error::Parse(format!("expected dx_{i} column")));
                }
                idx += 1;
            }
            with_vel = true;
        }
        let mut with_phase = false;
        if idx < cols.len() && cols[idx] == "true_phase" {
            with_phase = true;
            idx += 1;
        }
        if idx != cols.len() {
            return Err(Error::Parse(format!("unexpected column `{}`", cols[idx])));
        }

        let mut segments: Vec<Segment> = Vec::new();
        let mut seg_ids: Vec<u64> = Vec::new();
        for (row_no, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Parse(e.to_string()))?;
            let line = row_no + 2;
            let expect = 2 + dim * (1 + usize::from(with_vel)) + usize::from(with_phase);
            if record.len() != expect {
                return Err(Error::Parse(format!(
                    "line {line}: {} fields, expected {expect}",
                    record.len()
                )));
            }
            let parse_f = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("line {line}: bad number `{s}`")))
            };
            let sid: u64 = record[0]
                .parse()
                .map_err(|_| Error::Parse(format!("line {line}: bad segment_id `{}`", &record[0])))?;
            if seg_ids.last() != Some(&sid) {
                if seg_ids.contains(&sid) {
                    return Err(Error::Parse(format!(
                        "line {line}: segment {sid} rows are not contiguous"
                    )));
                }
                seg_ids.push(sid);
                segments.push(Segment {
                    times: Vec::new(),
                    states: Vec::new(),
                    velocities: with_vel.then(Vec::new),
                    true_phase: with_phase.then(Vec::new),
                });
            }
            let seg = segments.last_mut().unwrap();
            seg.times.push(parse_f(&record[1])?);
            let mut state = DVector::zeros(dim);
            for i in 0..dim {
                state[i] = parse_f(&record[2 + i])?;
            }
            seg.states.push(state);
            if with_vel {
                let mut vel = DVector::zeros(dim);
                for i in 0..dim {
                    vel[i] = parse_f(&record[2 + dim + i])?;
                }
                seg.velocities.as_mut().unwrap().push(vel);
            }
            if with_phase {
                seg.true_phase
                    .as_mut()
                    .unwrap()
                    .push(parse_f(&record[2 + dim * (1 + usize::from(with_vel))])?);
            }
        }
        let mut ds = TimeSeriesDataset::new(dim, segments)?;
        ds.config_json = config_json;
        Ok(ds)
    }

    pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::read_csv_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_dataset() -> TimeSeriesDataset {
        let seg = |t0: f64| Segment {
            times: vec![t0, t0 + 0.1, t0 + 0.2],
            states: vec![
                DVector::from_vec(vec![1.0, 2.0]),
                DVector::from_vec(vec![0.5, -0.25]),
                DVector::from_vec(vec![1.0 / 3.0, 1e-17]),
            ],
            velocities: Some(vec![
                DVector::from_vec(vec![0.0, 1.0]),
                DVector::from_vec(vec![-1.0, 0.125]),
                DVector::from_vec(vec![2.0, -3.0]),
            ]),
            true_phase: Some(vec![0.0, 1.5, 3.0]),
        };
        let mut ds = TimeSeriesDataset::new(2, vec![seg(0.0), seg(5.0)]).unwrap();
        ds.config_json = Some("{\"seed\":7}".to_string());
        ds
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = sample_dataset();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let back = TimeSeriesDataset::read_csv_str(&text).unwrap();
        assert_eq!(ds, back);
        assert_eq!(back.config_json.as_deref(), Some("{\"seed\":7}"));
    }

    #[test]
    fn optional_columns_detected() {
        let text = "segment_id,t,x_0\n0,0.0,1.0\n0,1.0,2.0\n";
        let ds = TimeSeriesDataset::read_csv_str(text).unwrap();
        assert_eq!(ds.dim, 1);
        assert!(!ds.has_velocities());
        assert!(!ds.has_true_phase());
    }

    #[test]
    fn rejects_decreasing_time() {
        let text = "segment_id,t,x_0\n0,1.0,1.0\n0,0.5,2.0\n";
        assert!(matches!(
            TimeSeriesDataset::read_csv_str(text),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn rejects_split_segment_blocks() {
        let text = "segment_id,t,x_0\n0,0.0,1.0\n1,0.0,1.0\n0,1.0,1.0\n";
        assert!(matches!(
            TimeSeriesDataset::read_csv_str(text),
            Err(Error::Parse(_))
        ));
    }
}
