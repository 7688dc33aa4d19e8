use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{Label3, Record};
use crate::error::{Error, Result};

/// Debounce hold used when none is given: three agreeing windows (15 ms).
pub const DEFAULT_HOLD: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ContactStart,
    ContactEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamEvent {
    pub kind: EventKind,
    /// Opening class for a start, majority class for an end.
    pub class3: Label3,
    pub frame: usize,
    /// Wall time from the deciding frame's arrival to the decision.
    pub latency_ms: f64,
}

/// A contact event over frames `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectedEvent {
    pub class3: Label3,
    pub start: usize,
    pub end: usize,
}

/// Ground truth: frames `[start, end)` carry `class3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub class3: Label3,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    fn overlaps(&self, start: usize, end: usize) -> bool {
        self.start < end && start < self.end
    }
}

/// Per-window class decisions. Window `i` ends at frame `frames[i]`.
#[derive(Debug, Clone, Copy)]
pub struct WindowClass {
    pub frame: usize,
    pub class3: Label3,
    pub latency_ms: f64,
}

/// Forms contact events from per-window classes.
///
/// An event opens at the `hold`-th consecutive window agreeing on one
/// contact class, and closes once `hold` consecutive non-contact windows
/// are seen; it then spans from the opening window up to (excluding) the
/// first of those non-contact windows. While an event is open, `hold`
/// consecutive windows agreeing on the other contact class close it at the
/// first of them, where a new event of that class starts. An event still
/// open when the windows run out ends after the last window. Its class is
/// the majority of contact predictions over its span, ties going to
/// collision. Event frames are the newest frames of the windows involved.
pub fn debounce(
    windows: &[WindowClass],
    hold: usize,
) -> Result<(Vec<DetectedEvent>, Vec<StreamEvent>)> {
    if hold == 0 {
        return Err(Error::Contract("debounce hold must be at least 1".into()));
    }
    let mut events = Vec::new();
    let mut stream = Vec::new();
    let mut close = |open_at: usize,
                     end_idx: usize,
                     end_frame: usize,
                     latency: f64,
                     stream: &mut Vec<StreamEvent>| {
        let (mut c2, mut c3) = (0, 0);
        for w in &windows[open_at..end_idx] {
            match w.class3 {
                Label3::Intentional => c2 += 1,
                Label3::Collision => c3 += 1,
                Label3::NonContact => {}
            }
        }
        let class3 = if c2 > c3 {
            Label3::Intentional
        } else {
            Label3::Collision
        };
        events.push(DetectedEvent {
            class3,
            start: windows[open_at].frame,
            end: end_frame,
        });
        stream.push(StreamEvent {
            kind: EventKind::ContactEnd,
            class3,
            frame: end_frame,
            latency_ms: latency,
        });
    };
    let start = |class3: Label3, at: &WindowClass, latency: f64, stream: &mut Vec<StreamEvent>| {
        stream.push(StreamEvent {
            kind: EventKind::ContactStart,
            class3,
            frame: at.frame,
            latency_ms: latency,
        });
    };
    // Current run of identical contact classes, and the open event's
    // first window and class.
    let mut run: Option<(Label3, usize)> = None;
    let mut open: Option<(usize, Label3)> = None;
    let mut quiet = 0usize;
    for (i, w) in windows.iter().enumerate() {
        run = match (run, w.class3.is_contact()) {
            (Some((c, n)), true) if c == w.class3 => Some((c, n + 1)),
            (_, true) => Some((w.class3, 1)),
            (_, false) => None,
        };
        quiet = if w.class3.is_contact() { 0 } else { quiet + 1 };
        match (open, run) {
            (None, Some((c, n))) if n == hold => {
                open = Some((i, c));
                start(c, w, w.latency_ms, &mut stream);
            }
            (Some((at, cur)), Some((c, n))) if c != cur && n == hold && i + 1 - hold > at => {
                let first = i + 1 - hold;
                close(at, first, windows[first].frame, w.latency_ms, &mut stream);
                open = Some((first, c));
                start(c, &windows[first], w.latency_ms, &mut stream);
            }
            (Some((at, _)), _) if quiet == hold => {
                let first = i + 1 - hold;
                close(at, first, windows[first].frame, w.latency_ms, &mut stream);
                open = None;
            }
            _ => {}
        }
    }
    if let Some((at, _)) = open {
        let last = windows.last().expect("an open event has windows");
        close(
            at,
            windows.len(),
            last.frame + 1,
            last.latency_ms,
            &mut stream,
        );
    }
    Ok((events, stream))
}

/// One cell of the event table: `count` out of `total`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub count: u64,
    pub total: u64,
}

impl Ratio {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count as f64 / self.total as f64
        }
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.count, self.total)
    }
}

/// Event-level scores per class (C1, C2, C3).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventScore {
    /// Ground-truth segments with no overlapping predicted span of their
    /// class, over all segments of the class.
    pub failures: [Ratio; 3],
    /// Predicted spans overlapping no segment of their class, over all
    /// predicted spans of the class.
    pub false_alarms: [Ratio; 3],
    /// Contact segments overlapped by no contact event of either class.
    pub contact_failures: Ratio,
}

fn check_segments(segments: &[Segment]) -> Result<()> {
    let mut s: Vec<&Segment> = segments.iter().collect();
    s.sort_by_key(|g| (g.start, g.end));
    for g in &s {
        if g.start >= g.end {
            return Err(Error::Input(format!(
                "empty ground-truth segment [{}, {})",
                g.start, g.end
            )));
        }
    }
    for w in s.windows(2) {
        if w[1].start < w[0].end {
            return Err(Error::Input(format!(
                "ground-truth segments [{}, {}) and [{}, {}) overlap",
                w[0].start, w[0].end, w[1].start, w[1].end
            )));
        }
    }
    Ok(())
}

/// Predicted non-contact spans: the gaps between contact events within
/// `[first, end)`.
pub fn noncontact_spans(events: &[DetectedEvent], first: usize, end: usize) -> Vec<(usize, usize)> {
    let mut ev: Vec<&DetectedEvent> = events.iter().collect();
    ev.sort_by_key(|e| e.start);
    let mut out = Vec::new();
    let mut cursor = first;
    for e in ev {
        if e.start > cursor {
            out.push((cursor, e.start.min(end)));
        }
        cursor = cursor.max(e.end);
    }
    if cursor < end {
        out.push((cursor, end));
    }
    out.retain(|(a, b)| a < b);
    out
}

/// Scores contact events against ground truth. Non-contact is scored the
/// same way, using the gaps between predicted events inside the predicted
/// range `[first, end)` as non-contact spans.
pub fn score_events(
    events: &[DetectedEvent],
    segments: &[Segment],
    first: usize,
    end: usize,
) -> Result<EventScore> {
    check_segments(segments)?;
    let mut spans: Vec<(Label3, usize, usize)> =
        events.iter().map(|e| (e.class3, e.start, e.end)).collect();
    spans.extend(
        noncontact_spans(events, first, end)
            .into_iter()
            .map(|(a, b)| (Label3::NonContact, a, b)),
    );
    let mut score = EventScore::default();
    for g in segments {
        let k = g.class3.index();
        score.failures[k].total += 1;
        if !spans
            .iter()
            .any(|&(c, a, b)| c == g.class3 && g.overlaps(a, b))
        {
            score.failures[k].count += 1;
        }
        if g.class3.is_contact() {
            score.contact_failures.total += 1;
            if !events.iter().any(|e| g.overlaps(e.start, e.end)) {
                score.contact_failures.count += 1;
            }
        }
    }
    for &(c, a, b) in &spans {
        let k = c.index();
        score.false_alarms[k].total += 1;
        if !segments.iter().any(|g| g.class3 == c && g.overlaps(a, b)) {
            score.false_alarms[k].count += 1;
        }
    }
    Ok(score)
}

/// One segment per record, with frames numbered across the concatenated log.
pub fn segments_from_records(records: &[Record]) -> Vec<Segment> {
    let mut start = 0;
    records
        .iter()
        .filter(|r| !r.frames.is_empty())
        .map(|r| {
            let g = Segment {
                class3: r.label3(),
                start,
                end: start + r.frames.len(),
            };
            start = g.end;
            g
        })
        .collect()
}

/// Event table with one column group per scored log (e.g. source and target).
pub fn render_event_table(columns: &[(&str, &EventScore)]) -> String {
    let mut s = format!("{:<20}", "");
    for (name, _) in columns {
        s.push_str(&format!("{:^30}", name));
    }
    s.push('\n');
    s.push_str(&format!("{:<20}", ""));
    for _ in columns {
        s.push_str(&format!("{:>10}{:>10}{:>10}", "C1", "C2", "C3"));
    }
    s.push('\n');
    for (label, pick) in [("Detection failures", 0), ("False alarms", 1)] {
        s.push_str(&format!("{label:<20}"));
        for (_, sc) in columns {
            let row = if pick == 0 {
                &sc.failures
            } else {
                &sc.false_alarms
            };
            for r in row {
                s.push_str(&format!("{:>10}", r.to_string()));
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label3::*;

    fn wins(classes: &[Label3]) -> Vec<WindowClass> {
        classes
            .iter()
            .enumerate()
            .map(|(i, &c)| WindowClass {
                frame: i + 27,
                class3: c,
                latency_ms: 0.0,
            })
            .collect()
    }

    #[test]
    fn hold_three_opens_on_third_window() {
        let (ev, st) = debounce(&wins(&[Intentional; 3]), 3).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].class3, Intentional);
        assert_eq!(ev[0].start, 29);
        assert_eq!(st[0].kind, EventKind::ContactStart);
        assert_eq!(st[0].frame, 29);
        assert_eq!(st[1].kind, EventKind::ContactEnd);
    }

    #[test]
    fn blip_is_ignored() {
        let (ev, _) = debounce(&wins(&[NonContact, Collision, NonContact, NonContact]), 3).unwrap();
        assert!(ev.is_empty());
    }

    #[test]
    fn close_after_quiet_run() {
        let c = [
            Collision,
            Collision,
            NonContact,
            Collision,
            NonContact,
            NonContact,
            Intentional,
        ];
        let (ev, st) = debounce(&wins(&c), 2).unwrap();
        assert_eq!(
            ev[0],
            DetectedEvent {
                class3: Collision,
                start: 28,
                end: 31,
            }
        );
        assert_eq!(ev.len(), 1);
        assert_eq!(st.len(), 2);
        assert_eq!(st[1].frame, 31);
    }

    #[test]
    fn class_switch_splits_events() {
        let c = [Intentional, Intentional, Collision, Collision, Intentional];
        let (ev, st) = debounce(&wins(&c), 2).unwrap();
        assert_eq!(ev.len(), 2);
        assert_eq!(
            (ev[0].class3, ev[0].start, ev[0].end),
            (Intentional, 28, 29)
        );
        assert_eq!((ev[1].class3, ev[1].start, ev[1].end), (Collision, 29, 32));
        assert_eq!(st.len(), 4);
    }

    #[test]
    fn majority_tie_is_collision() {
        let c = [Intentional, Intentional, Collision, NonContact, NonContact];
        let (ev, _) = debounce(&wins(&c), 2).unwrap();
        assert_eq!((ev[0].class3, ev[0].start, ev[0].end), (Collision, 28, 30));
    }

    #[test]
    fn perfect_detector_scores_zero() {
        let segs = [
            Segment {
                class3: NonContact,
                start: 0,
                end: 100,
            },
            Segment {
                class3: Intentional,
                start: 100,
                end: 200,
            },
            Segment {
                class3: NonContact,
                start: 200,
                end: 300,
            },
            Segment {
                class3: Collision,
                start: 300,
                end: 400,
            },
        ];
        let ev = [
            DetectedEvent {
                class3: Intentional,
                start: 100,
                end: 200,
            },
            DetectedEvent {
                class3: Collision,
                start: 300,
                end: 400,
            },
        ];
        let s = score_events(&ev, &segs, 27, 400).unwrap();
        for k in 0..3 {
            assert_eq!(s.failures[k].count, 0);
            assert_eq!(s.false_alarms[k].count, 0);
        }
        assert_eq!(s.failures[0].total, 2);
        assert_eq!(s.false_alarms[0].total, 2);
    }

    #[test]
    fn misclassified_event_counts_twice() {
        let segs = [Segment {
            class3: Intentional,
            start: 0,
            end: 50,
        }];
        let ev = [DetectedEvent {
            class3: Collision,
            start: 10,
            end: 40,
        }];
        let s = score_events(&ev, &segs, 0, 50).unwrap();
        assert_eq!(s.failures[1], Ratio { count: 1, total: 1 });
        assert_eq!(s.false_alarms[2], Ratio { count: 1, total: 1 });
        assert_eq!(s.contact_failures.count, 0);
    }

    #[test]
    fn overlapping_truth_is_rejected() {
        let segs = [
            Segment {
                class3: Intentional,
                start: 0,
                end: 50,
            },
            Segment {
                class3: Collision,
                start: 40,
                end: 60,
            },
        ];
        assert!(matches!(
            score_events(&[], &segs, 0, 60),
            Err(Error::Input(_))
        ));
    }
}
