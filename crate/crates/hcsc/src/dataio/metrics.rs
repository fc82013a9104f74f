//! Training metrics as CSV: `epoch,batch,layer,objective,recon_rel_err`, one
//! row per layer of every minibatch.

use std::io::{self, Write};

use hcsc_core::learning::{BatchRecord, EpochSummary, TrainMonitor};
use hcsc_core::model::HierarchicalModel;

pub const HEADER: &str = "epoch,batch,layer,objective,recon_rel_err";

pub struct MetricsWriter<W: Write> {
    out: W,
    error: Option<io::Error>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W) -> io::Result<Self> {
        writeln!(out, "{HEADER}")?;
        Ok(MetricsWriter { out, error: None })
    }

    pub fn write_record(&mut self, r: &BatchRecord) -> io::Result<()> {
        for (l, obj) in r.objective.iter().enumerate() {
            writeln!(
                self.out,
                "{},{},{},{},{}",
                r.epoch,
                r.batch,
                l + 1,
                obj,
                r.recon_rel_err
            )?;
        }
        Ok(())
    }

    /// Flushes and returns the writer, or the first write error seen while
    /// monitoring.
    pub fn finish(mut self) -> io::Result<W> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<W: Write> TrainMonitor for MetricsWriter<W> {
    fn on_batch(&mut self, record: &BatchRecord) {
        if self.error.is_none() {
            if let Err(e) = self.write_record(record) {
                self.error = Some(e);
            }
        }
    }

    fn on_epoch(&mut self, _summary: &EpochSummary, _model: &HierarchicalModel) {
        if self.error.is_none() {
            if let Err(e) = self.out.flush() {
                self.error = Some(e);
            }
        }
    }
}
