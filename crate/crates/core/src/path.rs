//! Time-indexed sample paths shared by every sampler.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathDim {
    Scalar,
    Planar,
}

impl PathDim {
    fn width(self) -> usize {
        match self {
            PathDim::Scalar => 1,
            PathDim::Planar => 2,
        }
    }
}

/// Values on a strictly increasing time grid. Planar paths store interleaved (x, y).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledPath {
    times: Vec<f64>,
    values: Vec<f64>,
    dim: PathDim,
}

impl SampledPath {
    pub fn new(times: Vec<f64>, values: Vec<f64>, dim: PathDim) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::domain("a path needs at least two grid points"));
        }
        if values.len() != times.len() * dim.width() {
            return Err(Error::domain(format!(
                "value length {} does not match {} grid points",
                values.len(),
                times.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("time grid must be strictly increasing"));
        }
        if times.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("path contains NaN or infinite entries".into()));
        }
        Ok(Self { times, values, dim })
    }

    /// Uniform grid on [t0, t0 + horizon] with `values.len() / width` points.
    pub fn uniform(t0: f64, horizon: f64, values: Vec<f64>, dim: PathDim) -> Result<Self> {
        let n = values.len() / dim.width();
        if n < 2 {
            return Err(Error::domain("a path needs at least two grid points"));
        }
        let dt = horizon / (n - 1) as f64;
        let times = (0..n).map(|i| t0 + dt * i as f64).collect();
        Self::new(times, values, dim)
    }

    pub(crate) fn from_parts_unchecked(times: Vec<f64>, values: Vec<f64>, dim: PathDim) -> Self {
        debug_assert_eq!(values.len(), times.len() * dim.width());
        Self { times, values, dim }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> PathDim {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Scalar value at grid index `i` (first coordinate for planar paths).
    pub fn value(&self, i: usize) -> f64 {
        self.values[i * self.dim.width()]
    }

    pub fn point(&self, i: usize) -> (f64, f64) {
        match self.dim {
            PathDim::Scalar => (self.values[i], 0.0),
            PathDim::Planar => (self.values[2 * i], self.values[2 * i + 1]),
        }
    }

    pub fn xs(&self) -> Vec<f64> {
        self.values.iter().step_by(self.dim.width()).copied().collect()
    }

    pub fn ys(&self) -> Vec<f64> {
        match self.dim {
            PathDim::Scalar => vec![0.0; self.len()],
            PathDim::Planar => self.values.iter().skip(1).step_by(2).copied().collect(),
        }
    }

    /// Grid index whose time is closest to `t`.
    pub fn index_near(&self, t: f64) -> usize {
        match self.times.binary_search_by(|s| s.partial_cmp(&t).unwrap()) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i >= self.len() => self.len() - 1,
            Err(i) => {
                if (t - self.times[i - 1]) <= (self.times[i] - t) {
                    i - 1
                } else {
                    i
                }
            }
        }
    }

    /// Linear interpolation of the point at time `t` (clamped to the grid).
    pub fn interpolate(&self, t: f64) -> (f64, f64) {
        let n = self.len();
        if t <= self.times[0] {
            return self.point(0);
        }
        if t >= self.times[n - 1] {
            return self.point(n - 1);
        }
        let i = self.times.partition_point(|&s| s <= t) - 1;
        let w = (t - self.times[i]) / (self.times[i + 1] - self.times[i]);
        let (a0, b0) = self.point(i);
        let (a1, b1) = self.point(i + 1);
        (a0 + w * (a1 - a0), b0 + w * (b1 - b0))
    }

    /// CSV with header `t,x` or `t,x,y`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        match self.dim {
            PathDim::Scalar => writeln!(out, "t,x")?,
            PathDim::Planar => writeln!(out, "t,x,y")?,
        }
        for i in 0..self.len() {
            match self.dim {
                PathDim::Scalar => writeln!(out, "{},{}", self.times[i], self.values[i])?,
                PathDim::Planar => writeln!(
                    out,
                    "{},{},{}",
                    self.times[i],
                    self.values[2 * i],
                    self.values[2 * i + 1]
                )?,
            }
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv is ascii")
    }

    /// Parse the CSV layout written by [`SampledPath::write_csv`].
    pub fn read_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty csv".into()))?;
        let dim = match header.trim() {
            "t,x" => PathDim::Scalar,
            "t,x,y" => PathDim::Planar,
            other => return Err(Error::Format(format!("unexpected header {other:?}"))),
        };
        let mut times = Vec::new();
        let mut values = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let mut fields = line.split(',').map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("bad number {f:?}: {e}")))
            });
            times.push(fields.next().ok_or_else(|| Error::Format("missing t".into()))??);
            for _ in 0..dim.width() {
                values.push(fields.next().ok_or_else(|| Error::Format("missing value".into()))??);
            }
        }
        Self::new(times, values, dim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_grids() {
        assert!(SampledPath::new(vec![0.0], vec![0.0], PathDim::Scalar).is_err());
        assert!(SampledPath::new(vec![0.0, 0.0], vec![0.0, 1.0], PathDim::Scalar).is_err());
        assert!(SampledPath::new(vec![0.0, 1.0], vec![0.0], PathDim::Scalar).is_err());
        assert!(SampledPath::new(vec![0.0, 1.0], vec![0.0, f64::NAN], PathDim::Scalar).is_err());
        assert!(SampledPath::new(vec![0.0, 1.0], vec![0.0, 1.0, 2.0, 3.0], PathDim::Planar).is_ok());
    }

    #[test]
    fn csv_round_trip_planar() {
        let p = SampledPath::uniform(0.0, 1.0, vec![0.0, 0.0, 0.5, -0.25, 1.0, 2.0], PathDim::Planar).unwrap();
        let q = SampledPath::read_csv(&p.to_csv_string()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn interpolation_and_lookup() {
        let p = SampledPath::uniform(0.0, 2.0, vec![0.0, 1.0, 4.0], PathDim::Scalar).unwrap();
        assert_eq!(p.interpolate(0.5).0, 0.5);
        assert_eq!(p.interpolate(1.5).0, 2.5);
        assert_eq!(p.index_near(1.4), 1);
        assert_eq!(p.index_near(7.0), 2);
    }
}
