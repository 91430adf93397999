//! Binary message encodings. All integers and floats are little-endian.
//!
//! Window payload on `stream/window` and `archive/data`:
//!
//! ```text
//! "HSWN"  u32 version
//! u64 window index, u64 open tick, u64 close tick
//! u32 variables, u32 context records, u32 window records
//! records (context first): i64 timestamp, f64 x variables
//! ```
//!
//! The context records are the tail of the previous window, carried over so
//! every record of this window has a full lag history.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use hybrid_core::timeseries::{Record, TimeWindow};
use std::io::{Cursor, Read};

use super::FabricError;

pub const CODEC_VERSION: u32 = 1;
const WINDOW_MAGIC: &[u8; 4] = b"HSWN";

/// Appends fixed-width little-endian fields.
#[derive(Debug, Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new(magic: &[u8; 4]) -> Self {
        let mut e = Self {
            buf: magic.to_vec(),
        };
        e.u32(CODEC_VERSION);
        e
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.write_u32::<LittleEndian>(v).expect("vec write");
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.write_u64::<LittleEndian>(v).expect("vec write");
        self
    }

    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.buf.write_i64::<LittleEndian>(v).expect("vec write");
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.buf.write_f64::<LittleEndian>(v).expect("vec write");
        self
    }

    /// u32 length followed by the values.
    pub fn f64s(&mut self, vs: &[f64]) -> &mut Self {
        self.u32(vs.len() as u32);
        vs.iter().for_each(|v| {
            self.f64(*v);
        });
        self
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.u32(b.len() as u32);
        self.buf.extend_from_slice(b);
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Decoder<'a> {
    cur: Cursor<&'a [u8]>,
    what: &'static str,
}

impl<'a> Decoder<'a> {
    pub fn new(bytes: &'a [u8], magic: &[u8; 4], what: &'static str) -> Result<Self, FabricError> {
        let mut d = Self {
            cur: Cursor::new(bytes),
            what,
        };
        let mut m = [0u8; 4];
        d.cur.read_exact(&mut m).map_err(|_| d.err("truncated"))?;
        if &m != magic {
            return Err(d.err("bad magic"));
        }
        let version = d.u32()?;
        if version != CODEC_VERSION {
            return Err(d.err(&format!("unsupported version {version}")));
        }
        Ok(d)
    }

    fn err(&self, msg: &str) -> FabricError {
        FabricError::Codec(format!("{}: {msg}", self.what))
    }

    pub fn u8(&mut self) -> Result<u8, FabricError> {
        self.cur.read_u8().map_err(|_| self.err("truncated"))
    }

    pub fn u32(&mut self) -> Result<u32, FabricError> {
        self.cur
            .read_u32::<LittleEndian>()
            .map_err(|_| self.err("truncated"))
    }

    pub fn u64(&mut self) -> Result<u64, FabricError> {
        self.cur
            .read_u64::<LittleEndian>()
            .map_err(|_| self.err("truncated"))
    }

    pub fn i64(&mut self) -> Result<i64, FabricError> {
        self.cur
            .read_i64::<LittleEndian>()
            .map_err(|_| self.err("truncated"))
    }

    pub fn f64(&mut self) -> Result<f64, FabricError> {
        self.cur
            .read_f64::<LittleEndian>()
            .map_err(|_| self.err("truncated"))
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>, FabricError> {
        let n = self.u32()? as usize;
        self.check_remaining(n.saturating_mul(8))?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>, FabricError> {
        let n = self.u32()? as usize;
        self.check_remaining(n)?;
        let mut b = vec![0u8; n];
        self.cur
            .read_exact(&mut b)
            .map_err(|_| self.err("truncated"))?;
        Ok(b)
    }

    fn check_remaining(&self, n: usize) -> Result<(), FabricError> {
        let left = self.cur.get_ref().len() - self.cur.position() as usize;
        if n > left {
            return Err(self.err("truncated"));
        }
        Ok(())
    }

    pub fn finish(self) -> Result<(), FabricError> {
        if self.cur.position() as usize != self.cur.get_ref().len() {
            return Err(self.err("trailing bytes"));
        }
        Ok(())
    }
}

/// A window plus its carried-over lag context.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPayload {
    pub window: TimeWindow,
    pub context: Vec<Record>,
}

impl WindowPayload {
    pub fn encode(&self) -> Vec<u8> {
        let variables = self
            .window
            .records
            .first()
            .or(self.context.first())
            .map_or(0, |r| r.values.len());
        let mut e = Encoder::new(WINDOW_MAGIC);
        e.u64(self.window.index)
            .u64(self.window.open_tick)
            .u64(self.window.close_tick)
            .u32(variables as u32)
            .u32(self.context.len() as u32)
            .u32(self.window.records.len() as u32);
        for r in self.context.iter().chain(&self.window.records) {
            e.i64(r.timestamp);
            r.values.iter().for_each(|v| {
                e.f64(*v);
            });
        }
        e.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FabricError> {
        let mut d = Decoder::new(bytes, WINDOW_MAGIC, "window payload")?;
        let index = d.u64()?;
        let open_tick = d.u64()?;
        let close_tick = d.u64()?;
        let variables = d.u32()? as usize;
        let context_len = d.u32()? as usize;
        let count = d.u32()? as usize;
        d.check_remaining((context_len + count).saturating_mul(8 * (variables + 1)))?;
        let mut read = |n: usize| -> Result<Vec<Record>, FabricError> {
            (0..n)
                .map(|_| {
                    let ts = d.i64()?;
                    let values = (0..variables).map(|_| d.f64()).collect::<Result<_, _>>()?;
                    Ok(Record::new(ts, values))
                })
                .collect()
        };
        let context = read(context_len)?;
        let records = read(count)?;
        d.finish()?;
        Ok(Self {
            window: TimeWindow {
                index,
                records,
                open_tick,
                close_tick,
            },
            context,
        })
    }

    /// Context followed by the window's own records.
    pub fn records_with_context(&self) -> Vec<Record> {
        self.context
            .iter()
            .chain(&self.window.records)
            .cloned()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn payload() -> WindowPayload {
        let rec = |t: i64| Record::new(t, vec![t as f64 * 0.5, -1.25, f64::MIN_POSITIVE]);
        WindowPayload {
            window: TimeWindow {
                index: 7,
                records: (10..14).map(rec).collect(),
                open_tick: 100,
                close_tick: 200,
            },
            context: (5..10).map(rec).collect(),
        }
    }

    #[test]
    fn window_roundtrip() {
        let p = payload();
        let bytes = p.encode();
        assert_eq!(WindowPayload::decode(&bytes).unwrap(), p);
        assert_eq!(bytes.len(), 8 + 24 + 12 + 9 * 32);
    }

    #[test]
    fn truncation_and_garbage_rejected() {
        let bytes = payload().encode();
        for cut in [0, 3, 8, 40, bytes.len() - 1] {
            assert!(WindowPayload::decode(&bytes[..cut]).is_err());
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(WindowPayload::decode(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(WindowPayload::decode(&bad).is_err());
    }

    #[test]
    fn empty_window_roundtrip() {
        let p = WindowPayload {
            window: TimeWindow {
                index: 0,
                records: vec![],
                open_tick: 0,
                close_tick: 0,
            },
            context: vec![],
        };
        assert_eq!(WindowPayload::decode(&p.encode()).unwrap(), p);
    }
}
