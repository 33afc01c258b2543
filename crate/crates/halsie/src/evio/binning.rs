//! Slicing an event stream into constant-time or constant-count windows.

use super::event::EventWindow;
use super::EvioError;

/// How a stream is cut into windows: constant integration time (CIT) or
/// constant event density (CED).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BinningPolicy {
    /// Consecutive windows of equal duration.
    ConstantTime { duration_us: u64 },
    /// Consecutive windows of exactly this many events.
    ConstantCount { events: usize },
}

impl BinningPolicy {
    pub fn cit_ms(ms: u64) -> Result<Self, EvioError> {
        if ms == 0 {
            return Err(EvioError::Config("CIT duration must be positive".into()));
        }
        Ok(BinningPolicy::ConstantTime {
            duration_us: ms * 1000,
        })
    }

    pub fn ced(events: usize) -> Result<Self, EvioError> {
        if events == 0 {
            return Err(EvioError::Config("CED count must be positive".into()));
        }
        Ok(BinningPolicy::ConstantCount { events })
    }
}

/// Cut a sorted stream into consecutive windows.
///
/// CIT emits `floor(span / T)` windows of exactly `T` micro­seconds
/// (half-open, except that the final window keeps an event sitting exactly
/// on the stream end); a trailing partial window is dropped. CED emits
/// full chunks of exactly `count` events and drops the partial tail.
pub fn slice_windows(
    stream: &EventWindow,
    policy: BinningPolicy,
) -> Result<Vec<EventWindow>, EvioError> {
    match policy {
        BinningPolicy::ConstantCount { events: k } => {
            if k == 0 {
                return Err(EvioError::Config("CED count must be positive".into()));
            }
            let mut out = Vec::with_capacity(stream.len() / k);
            for chunk in stream.events().chunks_exact(k) {
                out.push(EventWindow::new(
                    chunk.to_vec(),
                    stream.width(),
                    stream.height(),
                    chunk.first().expect("chunk is non-empty").t,
                    chunk.last().expect("chunk is non-empty").t,
                )?);
            }
            Ok(out)
        }
        BinningPolicy::ConstantTime { duration_us: t } => {
            if t == 0 {
                return Err(EvioError::Config("CIT duration must be positive".into()));
            }
            let span = stream.t_end() - stream.t_start();
            let n = (span / t) as usize;
            let mut out = Vec::with_capacity(n);
            let mut cursor = 0usize;
            let events = stream.events();
            for i in 0..n {
                let start = stream.t_start() + i as u64 * t;
                let end = start + t;
                let inclusive = end == stream.t_end();
                while cursor < events.len() && events[cursor].t < start {
                    cursor += 1;
                }
                let from = cursor;
                while cursor < events.len()
                    && (events[cursor].t < end || (inclusive && events[cursor].t == end))
                {
                    cursor += 1;
                }
                out.push(EventWindow::new(
                    events[from..cursor].to_vec(),
                    stream.width(),
                    stream.height(),
                    start,
                    end,
                )?);
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evio::event::{Event, Polarity};

    fn stream(ts: &[u64]) -> EventWindow {
        let events = ts
            .iter()
            .map(|&t| Event {
                t,
                x: 0,
                y: 0,
                polarity: Polarity::On,
            })
            .collect();
        EventWindow::from_events(events, 4, 4).unwrap()
    }

    #[test]
    fn ced_exact_division() {
        let ts: Vec<u64> = (0..300).map(|i| i * 10).collect();
        let windows = slice_windows(&stream(&ts), BinningPolicy::ced(100).unwrap()).unwrap();
        assert_eq!(windows.len(), 3);
        assert!(windows.iter().all(|w| w.len() == 100));
    }

    #[test]
    fn ced_drops_trailing_partial() {
        // boundary indices by hand: [0,100), [100,200); events 200..250 dropped
        let ts: Vec<u64> = (0..250).map(|i| i * 7).collect();
        let windows = slice_windows(&stream(&ts), BinningPolicy::ced(100).unwrap()).unwrap();
        assert_eq!(windows.len(), 2);
        assert_eq!(windows[0].events()[0].t, 0);
        assert_eq!(windows[0].events()[99].t, 99 * 7);
        assert_eq!(windows[1].events()[0].t, 100 * 7);
        assert_eq!(windows[1].events()[99].t, 199 * 7);
    }

    #[test]
    fn ced_count_above_total_gives_empty_sequence() {
        let ts: Vec<u64> = (0..50).collect();
        let windows = slice_windows(&stream(&ts), BinningPolicy::ced(100).unwrap()).unwrap();
        assert!(windows.is_empty());
    }

    #[test]
    fn cit_150ms_at_50ms_gives_three_windows() {
        // events every 1 ms over 150 ms
        let ts: Vec<u64> = (0..=150).map(|i| i * 1000).collect();
        let windows = slice_windows(&stream(&ts), BinningPolicy::cit_ms(50).unwrap()).unwrap();
        assert_eq!(windows.len(), 3);
        // final window keeps the event at exactly t_end
        assert_eq!(windows[2].events().last().unwrap().t, 150_000);
        let total: usize = windows.iter().map(|w| w.len()).sum();
        assert_eq!(total, 151);
    }

    #[test]
    fn cit_emits_empty_windows_for_quiet_intervals() {
        let ts = [0, 1, 250_000];
        let windows = slice_windows(&stream(&ts), BinningPolicy::cit_ms(50).unwrap()).unwrap();
        assert_eq!(windows.len(), 5);
        assert_eq!(windows[0].len(), 2);
        assert!(windows[1].is_empty() && windows[2].is_empty() && windows[3].is_empty());
        assert_eq!(windows[4].len(), 1);
    }
}
