//! Marked event streams observed on `[−A, T]`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Globally time-ordered marked events. Marks are 0-based in memory and
/// 1-based in the CSV format.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    times: Vec<f64>,
    marks: Vec<usize>,
    marks_count: usize,
    window_start: f64,
    horizon: f64,
    jittered: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    time: f64,
    mark: usize,
}

impl EventStream {
    /// Sorts the events and breaks exact ties by moving the later copy to the
    /// next representable float; the number of moved events is recorded.
    pub fn new(
        mut events: Vec<(f64, usize)>,
        marks_count: usize,
        window_start: f64,
        horizon: f64,
    ) -> Result<Self> {
        if marks_count == 0 {
            return Err(Error::InvalidInput("need at least one mark".into()));
        }
        if !(window_start <= horizon) {
            return Err(Error::InvalidInput(format!(
                "window start {window_start} after horizon {horizon}"
            )));
        }
        for &(t, k) in &events {
            if !t.is_finite() || t < window_start || t > horizon {
                return Err(Error::InvalidInput(format!(
                    "event time {t} outside [{window_start}, {horizon}]"
                )));
            }
            if k >= marks_count {
                return Err(Error::InvalidInput(format!("mark {} out of range", k + 1)));
            }
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut jittered = 0;
        for i in 1..events.len() {
            if events[i].0 <= events[i - 1].0 {
                events[i].0 = events[i - 1].0.next_up();
                jittered += 1;
            }
        }
        if let Some(&(t, _)) = events.last() {
            if t > horizon {
                return Err(Error::InvalidInput(
                    "tie-breaking pushed an event past the horizon".into(),
                ));
            }
        }
        let (times, marks) = events.into_iter().unzip();
        Ok(Self {
            times,
            marks,
            marks_count,
            window_start,
            horizon,
            jittered,
        })
    }

    pub fn empty(marks_count: usize, window_start: f64, horizon: f64) -> Self {
        Self {
            times: Vec::new(),
            marks: Vec::new(),
            marks_count,
            window_start,
            horizon,
            jittered: 0,
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.times.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    #[inline]
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    #[inline]
    pub fn marks(&self) -> &[usize] {
        &self.marks
    }

    #[inline]
    pub fn marks_count(&self) -> usize {
        self.marks_count
    }

    #[inline]
    pub fn window_start(&self) -> f64 {
        self.window_start
    }

    #[inline]
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of tie-broken events.
    #[inline]
    pub fn jittered(&self) -> usize {
        self.jittered
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.times.iter().copied().zip(self.marks.iter().copied())
    }

    /// Index of the first event with time `>= t`.
    #[inline]
    pub fn lower_bound(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s < t)
    }

    /// Index of the first event with time `> t`.
    #[inline]
    pub fn upper_bound(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t)
    }

    /// `N([a, b[)` over all marks.
    pub fn count_closed_open(&self, a: f64, b: f64) -> usize {
        self.lower_bound(b).saturating_sub(self.lower_bound(a))
    }

    /// `N(]a, b])` over all marks.
    pub fn count_open_closed(&self, a: f64, b: f64) -> usize {
        self.upper_bound(b).saturating_sub(self.upper_bound(a))
    }

    /// Per-mark event counts in `]0, T]`.
    pub fn counts_in_horizon(&self) -> Vec<usize> {
        let mut counts = vec![0; self.marks_count];
        for (t, k) in self.iter() {
            if t > 0.0 {
                counts[k] += 1;
            }
        }
        counts
    }

    /// Keeps events inside `[start, end]` and relabels the window.
    pub fn restricted(&self, start: f64, end: f64) -> EventStream {
        let lo = self.lower_bound(start);
        let hi = self.upper_bound(end);
        EventStream {
            times: self.times[lo..hi].to_vec(),
            marks: self.marks[lo..hi].to_vec(),
            marks_count: self.marks_count,
            window_start: start,
            horizon: end,
            jittered: 0,
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for (time, mark) in self.iter() {
            w.serialize(CsvRow {
                time,
                mark: mark + 1,
            })?;
        }
        if self.is_empty() {
            w.write_record(["time", "mark"])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the `time,mark` CSV format; the header is required.
    pub fn read_csv<R: Read>(
        reader: R,
        marks_count: usize,
        window_start: f64,
        horizon: f64,
    ) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "time" || &headers[1] != "mark" {
            return Err(Error::InvalidInput(format!(
                "expected header `time,mark`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut events = Vec::new();
        for row in r.deserialize() {
            let row: CsvRow = row?;
            if row.mark == 0 {
                return Err(Error::InvalidInput("marks are 1-based".into()));
            }
            events.push((row.time, row.mark - 1));
        }
        Self::new(events, marks_count, window_start, horizon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorts_and_breaks_ties() {
        let s = EventStream::new(vec![(0.5, 0), (0.2, 1), (0.5, 1)], 2, -1.0, 1.0).unwrap();
        assert_eq!(s.jittered(), 1);
        assert!(s.times().windows(2).all(|w| w[0] < w[1]));
        assert!(s.times()[2] - 0.5 < 1e-12);
    }

    #[test]
    fn rejects_out_of_window() {
        assert!(EventStream::new(vec![(2.0, 0)], 1, -1.0, 1.0).is_err());
        assert!(EventStream::new(vec![(0.0, 3)], 2, -1.0, 1.0).is_err());
    }

    #[test]
    fn window_counts() {
        let s = EventStream::new(vec![(0.1, 0), (0.2, 0), (0.9, 0), (2.0, 0)], 1, -1.0, 3.0).unwrap();
        assert_eq!(s.count_closed_open(0.1, 1.1), 3);
        assert_eq!(s.count_open_closed(0.1, 1.1), 2);
    }

    #[test]
    fn csv_round_trip() {
        let s = EventStream::new(vec![(-0.3, 0), (0.25, 1), (1.5, 0)], 2, -1.0, 2.0).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("time,mark\n"));
        assert!(text.contains("0.25,2"));
        let back = EventStream::read_csv(buf.as_slice(), 2, -1.0, 2.0).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn csv_requires_header() {
        let data = "0.5,1\n";
        assert!(EventStream::read_csv(data.as_bytes(), 1, -1.0, 1.0).is_err());
    }
}
