use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub const TRAJECTORY_HEADER: [&str; 10] = [
    "step",
    "w_polarity",
    "w_aspect",
    "w_opinion",
    "sigma2_polarity",
    "sigma2_aspect",
    "sigma2_opinion",
    "L_p",
    "L_a",
    "L_o",
];

/// One optimizer step of the weight trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: u64,
    pub w_polarity: f64,
    pub w_aspect: f64,
    pub w_opinion: f64,
    pub sigma2_polarity: f64,
    pub sigma2_aspect: f64,
    pub sigma2_opinion: f64,
    #[serde(rename = "L_p")]
    pub loss_polarity: f64,
    #[serde(rename = "L_a")]
    pub loss_aspect: f64,
    #[serde(rename = "L_o")]
    pub loss_opinion: f64,
}

impl TrajectoryRow {
    pub fn weights(&self) -> [f64; 3] {
        [self.w_polarity, self.w_aspect, self.w_opinion]
    }
}

pub struct TrajectoryWriter {
    inner: csv::Writer<BufWriter<File>>,
}

impl TrajectoryWriter {
    /// Writes the header immediately, so a run with no steps still leaves a
    /// well-formed file.
    pub fn create(path: impl AsRef<Path>) -> csv::Result<Self> {
        let file = File::create(path)?;
        let mut inner = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(BufWriter::new(file));
        inner.write_record(TRAJECTORY_HEADER)?;
        Ok(TrajectoryWriter { inner })
    }

    pub fn write(&mut self, row: &TrajectoryRow) -> csv::Result<()> {
        self.inner.serialize(row)
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

pub fn read_trajectory(path: impl AsRef<Path>) -> csv::Result<Vec<TrajectoryRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().collect()
}
