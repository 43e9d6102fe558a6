use super::EdgeError;
use crate::model::{is_rri_artifact, RriInterval, WorkerId};

/// Builds one interval from two consecutive peaks.
pub fn derive_rri(
    worker: &WorkerId,
    previous_peak_ts: u64,
    new_peak_ts: u64,
    previous_rri_ms: Option<u64>,
    seq: u64,
) -> Result<RriInterval, EdgeError> {
    if new_peak_ts <= previous_peak_ts {
        return Err(EdgeError::NonIncreasingPeak {
            previous: previous_peak_ts,
            new: new_peak_ts,
        });
    }
    let rri_ms = new_peak_ts - previous_peak_ts;
    Ok(RriInterval {
        worker: worker.clone(),
        ts: new_peak_ts,
        rri_ms,
        artifact: is_rri_artifact(rri_ms, previous_rri_ms),
        seq,
    })
}

/// Turns a peak stream into RRIs with monotone sequence numbers.
#[derive(Debug, Clone)]
pub struct RriTracker {
    worker: WorkerId,
    last_peak: Option<u64>,
    last_rri: Option<u64>,
    next_seq: u64,
}

impl RriTracker {
    pub fn new(worker: WorkerId) -> Self {
        Self {
            worker,
            last_peak: None,
            last_rri: None,
            next_seq: 0,
        }
    }

    /// Returns the interval closed by this peak; the first peak only opens one.
    pub fn on_peak(&mut self, ts: u64) -> Result<Option<RriInterval>, EdgeError> {
        let Some(prev) = self.last_peak else {
            self.last_peak = Some(ts);
            return Ok(None);
        };
        let rri = derive_rri(&self.worker, prev, ts, self.last_rri, self.next_seq)?;
        self.next_seq += 1;
        self.last_peak = Some(ts);
        self.last_rri = Some(rri.rri_ms);
        Ok(Some(rri))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w() -> WorkerId {
        WorkerId::new("w1").unwrap()
    }

    #[test]
    fn plain_interval() {
        let r = derive_rri(&w(), 800, 1600, None, 0).unwrap();
        assert_eq!((r.rri_ms, r.artifact, r.ts), (800, false, 1600));
    }

    #[test]
    fn out_of_range_flagged() {
        let r = derive_rri(&w(), 1600, 4100, Some(800), 1).unwrap();
        assert_eq!(r.rri_ms, 2500);
        assert!(r.artifact);
    }

    #[test]
    fn jump_flagged() {
        let r = derive_rri(&w(), 1000, 2000, Some(800), 1).unwrap();
        assert!(r.artifact);
    }

    #[test]
    fn non_increasing_rejected() {
        assert!(derive_rri(&w(), 1000, 1000, None, 0).is_err());
        assert!(derive_rri(&w(), 1000, 900, None, 0).is_err());
    }

    #[test]
    fn tracker_sequences() {
        let mut t = RriTracker::new(w());
        assert_eq!(t.on_peak(800).unwrap(), None);
        let a = t.on_peak(1600).unwrap().unwrap();
        let b = t.on_peak(2400).unwrap().unwrap();
        assert_eq!((a.seq, b.seq), (0, 1));
        assert!(t.on_peak(2000).is_err());
    }
}
