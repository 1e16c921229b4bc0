use crate::error::{Error, Result};
use crate::event::Event;

/// Rate of frame-classifier outputs.
pub const FRAME_RATE: f64 = 10.0;
const EDGE_EPS: f64 = 1e-9;

/// Class of each of `n_frames` 10 Hz frames starting at `origin`: the label
/// of an event containing the frame centre `origin + (2k+1)/20`, else
/// `background`. Events with labels outside `labels` are ignored.
pub fn rasterize(events: &[Event], origin: f64, n_frames: usize, labels: &[&str], background: usize) -> Vec<usize> {
    (0..n_frames)
        .map(|k| {
            let c = origin + (2 * k + 1) as f64 / (2.0 * FRAME_RATE);
            events
                .iter()
                .filter(|e| e.start - EDGE_EPS <= c && c <= e.end + EDGE_EPS)
                .find_map(|e| labels.iter().position(|l| *l == e.label))
                .unwrap_or(background)
        })
        .collect()
}

/// Groups runs of equal per-frame argmax into events
/// `[origin + i/10, origin + (j+1)/10]` with confidence equal to the mean
/// posterior of the run's label. Background runs and runs shorter than
/// `min_event_dur` are omitted. `posteriors` holds `frames` rows of
/// `labels.len()` values.
pub fn frames_to_events(
    posteriors: &[f64],
    labels: &[&str],
    background: usize,
    origin: f64,
    min_event_dur: f64,
) -> Result<Vec<Event>> {
    let k = labels.len();
    if k == 0 || posteriors.len() % k != 0 {
        return Err(Error::Shape(format!(
            "{} posterior values for {k} labels",
            posteriors.len()
        )));
    }
    let rows: Vec<&[f64]> = posteriors.chunks(k).collect();
    let arg: Vec<usize> = rows
        .iter()
        .map(|r| {
            let mut best = 0;
            for (i, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = i;
                }
            }
            best
        })
        .collect();
    let mut events = Vec::new();
    let mut i = 0;
    while i < arg.len() {
        let mut j = i;
        while j + 1 < arg.len() && arg[j + 1] == arg[i] {
            j += 1;
        }
        let c = arg[i];
        let start = origin + i as f64 / FRAME_RATE;
        let end = origin + (j + 1) as f64 / FRAME_RATE;
        if c != background && end - start >= min_event_dur - EDGE_EPS {
            let conf = rows[i..=j].iter().map(|r| r[c]).sum::<f64>() / (j - i + 1) as f64;
            events.push(Event::new(start, end, labels[c], conf));
        }
        i = j + 1;
    }
    Ok(events)
}
