//! Optional CSV traces. At most one trace is written per run.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::SimTime;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceKind {
    Mac,
    Rrm,
    Rrc,
    #[default]
    None,
}

impl TraceKind {
    pub fn header(self) -> Option<&'static str> {
        match self {
            TraceKind::Mac => Some("tti,cell,carrier,channel,bits"),
            TraceKind::Rrm => Some("time,decision,subject,detail"),
            TraceKind::Rrc => Some("time,event,ue,cell,detail"),
            TraceKind::None => None,
        }
    }
}

impl fmt::Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TraceKind::Mac => "mac",
            TraceKind::Rrm => "rrm",
            TraceKind::Rrc => "rrc",
            TraceKind::None => "none",
        })
    }
}

impl FromStr for TraceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mac" => Ok(TraceKind::Mac),
            "rrm" => Ok(TraceKind::Rrm),
            "rrc" => Ok(TraceKind::Rrc),
            "none" => Ok(TraceKind::None),
            other => Err(format!("unknown trace kind `{other}`")),
        }
    }
}

/// Times in trace files are milliseconds with microsecond precision.
fn ms(t: SimTime) -> String {
    format!("{}.{:03}", t.0 / 1000, t.0 % 1000)
}

/// Details may contain commas; quote them.
fn field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub struct Trace {
    kind: TraceKind,
    out: Option<Box<dyn Write + Send>>,
    error: Option<io::Error>,
}

impl Trace {
    pub fn disabled() -> Self {
        Trace {
            kind: TraceKind::None,
            out: None,
            error: None,
        }
    }

    pub fn new(kind: TraceKind, out: Option<Box<dyn Write + Send>>) -> Self {
        let mut t = Trace {
            kind: if out.is_some() { kind } else { TraceKind::None },
            out,
            error: None,
        };
        if let Some(h) = t.kind.header() {
            t.line(format_args!("{h}"));
        }
        t
    }

    pub fn kind(&self) -> TraceKind {
        self.kind
    }

    fn line(&mut self, args: fmt::Arguments<'_>) {
        if self.error.is_some() {
            return;
        }
        if let Some(out) = self.out.as_mut() {
            if let Err(e) = out.write_fmt(args).and_then(|_| out.write_all(b"\n")) {
                self.error = Some(e);
            }
        }
    }

    pub fn mac_enabled(&self) -> bool {
        self.kind == TraceKind::Mac
    }

    pub fn rrm_enabled(&self) -> bool {
        self.kind == TraceKind::Rrm
    }

    pub fn rrc_enabled(&self) -> bool {
        self.kind == TraceKind::Rrc
    }

    pub fn mac(&mut self, tti: u64, cell: u32, carrier: u32, channel: u32, bits: u64) {
        if self.mac_enabled() {
            self.line(format_args!("{tti},{cell},{carrier},{channel},{bits}"));
        }
    }

    pub fn rrm(&mut self, time: SimTime, decision: &str, subject: &str, detail: &str) {
        if self.rrm_enabled() {
            self.line(format_args!("{},{decision},{},{}", ms(time), field(subject), field(detail)));
        }
    }

    pub fn rrc(&mut self, time: SimTime, event: &str, ue: u32, cell: u32, detail: &str) {
        if self.rrc_enabled() {
            self.line(format_args!("{},{event},{ue},{cell},{}", ms(time), field(detail)));
        }
    }

    /// Flush and surface the first write error, if any.
    pub fn finish(&mut self) -> io::Result<()> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        match self.out.as_mut() {
            Some(out) => out.flush(),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::{Arc, Mutex};

    #[derive(Clone, Default)]
    struct Shared(Arc<Mutex<Vec<u8>>>);

    impl Write for Shared {
        fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
            self.0.lock().unwrap().extend_from_slice(buf);
            Ok(buf.len())
        }
        fn flush(&mut self) -> io::Result<()> {
            Ok(())
        }
    }

    #[test]
    fn only_the_selected_kind_is_written() {
        let buf = Shared::default();
        let mut t = Trace::new(TraceKind::Rrm, Some(Box::new(buf.clone())));
        t.mac(1, 1, 1, 1, 100);
        t.rrc(SimTime(5), "page", 1, 1, "REACHED");
        t.rrm(SimTime(100_250), "escalate", "bearer1", "SINGLE->SPLIT, +cell2/lte");
        t.finish().unwrap();
        let text = String::from_utf8(buf.0.lock().unwrap().clone()).unwrap();
        assert_eq!(
            text,
            "time,decision,subject,detail\n100.250,escalate,bearer1,\"SINGLE->SPLIT, +cell2/lte\"\n"
        );
    }

    #[test]
    fn kind_round_trips_through_text() {
        for k in [TraceKind::Mac, TraceKind::Rrm, TraceKind::Rrc, TraceKind::None] {
            assert_eq!(k.to_string().parse::<TraceKind>().unwrap(), k);
        }
        assert!("phy".parse::<TraceKind>().is_err());
    }
}
