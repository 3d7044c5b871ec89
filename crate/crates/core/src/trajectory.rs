//! Time series produced by every simulator, with a fixed CSV schema.

use std::io::Write;

use serde::Serialize;

use crate::error::{check_len, GameError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    pub alpha: Vec<f64>,
    pub welfare: f64,
    pub lyapunov: f64,
    /// SIR or OSNR in dB for the power-control games.
    pub metrics: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Trajectory {
    n: usize,
    samples: Vec<Sample>,
}

impl Trajectory {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            samples: Vec::new(),
        }
    }

    pub fn n_players(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, sample: Sample) -> Result<()> {
        check_len("trajectory x", self.n, sample.x.len())?;
        check_len("trajectory alpha", self.n, sample.alpha.len())?;
        check_len("trajectory metrics", self.n, sample.metrics.len())?;
        if let Some(last) = self.samples.last() {
            if !(sample.t > last.t) {
                return Err(GameError::Numerics(format!(
                    "trajectory time must increase: {} after {}",
                    sample.t, last.t
                )));
            }
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    pub fn first(&self) -> Option<&Sample> {
        self.samples.first()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend((1..=self.n).map(|i| format!("x_{i}")));
        h.extend((1..=self.n).map(|i| format!("alpha_{i}")));
        h.push("welfare".into());
        h.push("lyapunov".into());
        h.extend((1..=self.n).map(|i| format!("metric_{i}")));
        h
    }

    /// RFC-4180 CSV with a header row and 15 significant digits per value.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| GameError::Config(format!("writing trajectory: {e}"));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header()).map_err(io)?;
        for s in &self.samples {
            let row = std::iter::once(s.t)
                .chain(s.x.iter().copied())
                .chain(s.alpha.iter().copied())
                .chain([s.welfare, s.lyapunov])
                .chain(s.metrics.iter().copied())
                .map(|v| format!("{v:.14e}"));
            w.write_record(row).map_err(io)?;
        }
        w.flush()
            .map_err(|e| GameError::Config(format!("writing trajectory: {e}")))
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| GameError::Numerics(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: f64) -> Sample {
        Sample {
            t,
            x: vec![1.0, 2.0],
            alpha: vec![0.5, 0.25],
            welfare: 3.0,
            lyapunov: -3.0,
            metrics: vec![10.0, 20.0],
        }
    }

    #[test]
    fn schema_and_formatting() {
        let mut tr = Trajectory::new(2);
        tr.push(sample(0.0)).unwrap();
        tr.push(sample(1.0)).unwrap();
        let csv = tr.to_csv_string().unwrap();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,x_1,x_2,alpha_1,alpha_2,welfare,lyapunov,metric_1,metric_2"
        );
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 2 * 2 + 3 + 2);
        assert_eq!(row[1], "1.00000000000000e0");
    }

    #[test]
    fn time_must_increase() {
        let mut tr = Trajectory::new(2);
        tr.push(sample(1.0)).unwrap();
        assert!(tr.push(sample(1.0)).is_err());
        let mut bad = sample(2.0);
        bad.x.pop();
        assert!(matches!(tr.push(bad), Err(GameError::Dimension { .. })));
    }
}
