//! Labelled time intervals and their CSV form (`start_s,end_s,label,confidence`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    #[serde(rename = "start_s")]
    pub start: f64,
    #[serde(rename = "end_s")]
    pub end: f64,
    pub label: String,
    #[serde(default = "one")]
    pub confidence: f64,
}

fn one() -> f64 {
    1.0
}

impl Event {
    pub fn new(start: f64, end: f64, label: impl Into<String>, confidence: f64) -> Self {
        Self {
            start,
            end,
            label: label.into(),
            confidence,
        }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.start.is_finite() && self.end.is_finite()) || self.start >= self.end {
            return Err(Error::Invalid(format!(
                "event [{}, {}] {} is not a valid interval",
                self.start, self.end, self.label
            )));
        }
        Ok(())
    }
}

/// Sorts by onset, then offset, then label.
pub fn sort_events(events: &mut [Event]) {
    events.sort_by(|a, b| {
        a.start
            .total_cmp(&b.start)
            .then(a.end.total_cmp(&b.end))
            .then_with(|| a.label.cmp(&b.label))
    });
}

pub fn write_events_csv<W: std::io::Write>(w: W, events: &[Event]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    if events.is_empty() {
        // serde writes the header with the first row only.
        wr.write_record(["start_s", "end_s", "label", "confidence"])?;
    }
    for e in events {
        wr.serialize(e)?;
    }
    wr.flush().map_err(|e| Error::Malformed(e.to_string()))?;
    Ok(())
}

pub fn save_events(path: impl AsRef<Path>, events: &[Event]) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_events_csv(f, events)
}

pub fn read_events_csv<R: std::io::Read>(r: R) -> Result<Vec<Event>> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut out = Vec::new();
    for row in rd.deserialize() {
        let e: Event = row?;
        e.validate()?;
        out.push(e);
    }
    Ok(out)
}

pub fn load_events(path: impl AsRef<Path>) -> Result<Vec<Event>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_events_csv(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let ev = vec![
            Event::new(1.0, 1.5, "filler", 0.9),
            Event::new(2.25, 2.5, "breath", 0.5),
        ];
        let mut buf = Vec::new();
        write_events_csv(&mut buf, &ev).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("start_s,end_s,label,confidence\n1.0,1.5,filler,0.9\n"));
        assert_eq!(read_events_csv(&buf[..]).unwrap(), ev);
    }

    #[test]
    fn empty_list_keeps_header() {
        let mut buf = Vec::new();
        write_events_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "start_s,end_s,label,confidence\n");
        assert!(read_events_csv(&buf[..]).unwrap().is_empty());
    }

    #[test]
    fn confidence_column_is_optional() {
        let ev = read_events_csv(&b"start_s,end_s,label\n1,2,filler\n"[..]).unwrap();
        assert_eq!(ev[0].confidence, 1.0);
    }

    #[test]
    fn inverted_interval_is_rejected() {
        assert!(read_events_csv(&b"start_s,end_s,label\n2,1,filler\n"[..]).is_err());
    }
}
