//! Events, event windows, and the event CSV format.

use std::io::{BufRead, Write};

use super::EvioError;

/// Polarity of an intensity change.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Polarity {
    Off = 0,
    On = 1,
}

impl Polarity {
    pub fn from_int(p: u8) -> Option<Self> {
        match p {
            0 => Some(Polarity::Off),
            1 => Some(Polarity::On),
            _ => None,
        }
    }

    /// Channel index in an event volume: OFF = 0, ON = 1.
    pub fn channel(self) -> usize {
        self as usize
    }
}

/// One timestamped polarity change. Timestamps are 64-bit microseconds;
/// 32 bits overflow on recording-length streams.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Event {
    pub t: u64,
    pub x: u32,
    pub y: u32,
    pub polarity: Polarity,
}

/// A time-ordered batch of events with its sensor geometry and the time
/// span it covers.
#[derive(Clone, Debug)]
pub struct EventWindow {
    events: Vec<Event>,
    width: u32,
    height: u32,
    t_start: u64,
    t_end: u64,
}

impl EventWindow {
    /// Build a window with explicit bounds, validating every invariant:
    /// events sorted by timestamp, coordinates inside the geometry, and all
    /// timestamps within `[t_start, t_end]`.
    pub fn new(
        events: Vec<Event>,
        width: u32,
        height: u32,
        t_start: u64,
        t_end: u64,
    ) -> Result<Self, EvioError> {
        if width == 0 || height == 0 {
            return Err(EvioError::Config("sensor geometry must be positive".into()));
        }
        if t_end < t_start {
            return Err(EvioError::Config("window ends before it starts".into()));
        }
        let mut prev = t_start;
        for e in &events {
            if e.t < prev {
                return Err(EvioError::Config("events out of order".into()));
            }
            if e.t > t_end {
                return Err(EvioError::Config("event after window end".into()));
            }
            if e.x >= width || e.y >= height {
                return Err(EvioError::Config(format!(
                    "event at ({}, {}) outside {width}×{height}",
                    e.x, e.y
                )));
            }
            prev = e.t;
        }
        Ok(EventWindow {
            events,
            width,
            height,
            t_start,
            t_end,
        })
    }

    /// Build a window whose bounds are the first and last event timestamps
    /// (both zero when empty). Events are stably sorted first.
    pub fn from_events(mut events: Vec<Event>, width: u32, height: u32) -> Result<Self, EvioError> {
        events.sort_by_key(|e| e.t);
        let (t_start, t_end) = match (events.first(), events.last()) {
            (Some(f), Some(l)) => (f.t, l.t),
            _ => (0, 0),
        };
        Self::new(events, width, height, t_start, t_end)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn t_start(&self) -> u64 {
        self.t_start
    }

    pub fn t_end(&self) -> u64 {
        self.t_end
    }

    pub fn count_with_polarity(&self, p: Polarity) -> usize {
        self.events.iter().filter(|e| e.polarity == p).count()
    }
}

/// Header line of the event CSV format.
pub const CSV_HEADER: &str = "t_us,x,y,p";

/// Parse the event CSV format (`t_us,x,y,p` header, one ASCII-decimal event
/// per line). Rows may arrive out of order; they are sorted stably. Errors
/// name the offending line.
pub fn parse_events(
    reader: impl BufRead,
    width: u32,
    height: u32,
) -> Result<EventWindow, EvioError> {
    let mut lines = reader.lines().enumerate();
    match lines.next() {
        Some((_, Ok(header))) if header.trim_end() == CSV_HEADER => {}
        Some((_, Ok(header))) => {
            return Err(EvioError::Parse {
                line: 1,
                msg: format!("expected header `{CSV_HEADER}`, got `{}`", header.trim_end()),
            })
        }
        Some((_, Err(e))) => return Err(e.into()),
        None => {
            return Err(EvioError::Parse {
                line: 1,
                msg: "empty stream, expected a header".into(),
            })
        }
    }

    let mut events = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        let row = line.trim_end();
        if row.is_empty() {
            continue;
        }
        let mut fields = row.split(',');
        let mut next_field = |name: &str| {
            fields.next().ok_or(EvioError::Parse {
                line: lineno,
                msg: format!("missing field `{name}`"),
            })
        };
        let t: u64 = parse_int(next_field("t_us")?, "t_us", lineno)?;
        let x: u32 = parse_int(next_field("x")?, "x", lineno)?;
        let y: u32 = parse_int(next_field("y")?, "y", lineno)?;
        let p: u8 = parse_int(next_field("p")?, "p", lineno)?;
        if fields.next().is_some() {
            return Err(EvioError::Parse {
                line: lineno,
                msg: "too many fields".into(),
            });
        }
        if x >= width {
            return Err(EvioError::Parse {
                line: lineno,
                msg: format!("x out of range at line {lineno}: {x} ≥ {width}"),
            });
        }
        if y >= height {
            return Err(EvioError::Parse {
                line: lineno,
                msg: format!("y out of range at line {lineno}: {y} ≥ {height}"),
            });
        }
        let polarity = Polarity::from_int(p).ok_or(EvioError::Parse {
            line: lineno,
            msg: format!("polarity must be 0 or 1, got {p}"),
        })?;
        events.push(Event { t, x, y, polarity });
    }
    EventWindow::from_events(events, width, height)
}

fn parse_int<T: std::str::FromStr>(s: &str, name: &str, line: usize) -> Result<T, EvioError> {
    s.parse().map_err(|_| EvioError::Parse {
        line,
        msg: format!("field `{name}` is not a valid integer: `{s}`"),
    })
}

/// Write a window in the event CSV format (LF line endings).
pub fn write_events_csv(window: &EventWindow, mut out: impl Write) -> std::io::Result<()> {
    out.write_all(CSV_HEADER.as_bytes())?;
    out.write_all(b"\n")?;
    for e in window.events() {
        writeln!(out, "{},{},{},{}", e.t, e.x, e.y, e.polarity as u8)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn single_record_parse() {
        let window = parse_events(Cursor::new("t_us,x,y,p\n1000,3,4,1\n"), 346, 260).unwrap();
        assert_eq!(window.len(), 1);
        let e = window.events()[0];
        assert_eq!((e.t, e.x, e.y, e.polarity), (1000, 3, 4, Polarity::On));
        assert_eq!((window.t_start(), window.t_end()), (1000, 1000));
    }

    #[test]
    fn empty_body_is_an_empty_window() {
        let window = parse_events(Cursor::new("t_us,x,y,p\n"), 346, 260).unwrap();
        assert!(window.is_empty());
        assert_eq!((window.t_start(), window.t_end()), (0, 0));
    }

    #[test]
    fn x_out_of_range_names_the_line() {
        let err = parse_events(Cursor::new("t_us,x,y,p\n5,400,4,1\n"), 346, 260).unwrap_err();
        match err {
            EvioError::Parse { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("x out of range"), "{msg}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn bad_polarity_and_field_counts_are_rejected() {
        for body in ["1,2,3,7", "1,2,3", "1,2,3,1,9", "a,2,3,1"] {
            let input = format!("t_us,x,y,p\n{body}\n");
            assert!(
                parse_events(Cursor::new(input), 10, 10).is_err(),
                "{body} should fail"
            );
        }
    }

    #[test]
    fn out_of_order_rows_are_sorted_stably() {
        let input = "t_us,x,y,p\n300,1,1,0\n100,2,2,1\n300,3,3,1\n";
        let window = parse_events(Cursor::new(input), 10, 10).unwrap();
        let ts: Vec<u64> = window.events().iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![100, 300, 300]);
        // stability: the two t=300 rows keep their relative order
        assert_eq!(window.events()[1].x, 1);
        assert_eq!(window.events()[2].x, 3);
    }

    #[test]
    fn csv_round_trip() {
        let input = "t_us,x,y,p\n100,2,2,1\n300,1,1,0\n";
        let window = parse_events(Cursor::new(input), 10, 10).unwrap();
        let mut buf = Vec::new();
        write_events_csv(&window, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), input);
    }
}
