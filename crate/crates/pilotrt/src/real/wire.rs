//! Framed pipe protocol between the pool backend and its worker processes.
//!
//! Every frame is a 4-byte big-endian length followed by that many bytes of
//! UTF-8. Requests are `uid \t kind \t args`, responses `uid \t OK|ERR \t
//! detail`. Function kinds: `noop`, `sleep` (args = seconds), `fail`
//! (args = message). Control kinds: `ping` and `shutdown`; the shutdown
//! response reports `spawned={n}` so callers can audit child-process use.

use std::io::{self, Read, Write};

/// Upper bound on a sane frame; anything larger is a corrupt length prefix.
const MAX_FRAME: u32 = 1 << 20;

pub fn write_frame(w: &mut impl Write, payload: &str) -> io::Result<()> {
    let bytes = payload.as_bytes();
    let len = u32::try_from(bytes.len())
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "frame too large"));
    }
    w.write_all(&len.to_be_bytes())?;
    w.write_all(bytes)?;
    w.flush()
}

/// Reads one frame; `Ok(None)` means the peer closed the stream cleanly
/// (EOF on the length prefix boundary).
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<String>> {
    let mut len_buf = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match r.read(&mut len_buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => {
                return Err(io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    "stream closed mid-length",
                ))
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    let len = u32::from_be_bytes(len_buf);
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "frame length out of range"));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body)?;
    String::from_utf8(body)
        .map(Some)
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "frame is not UTF-8"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub uid: String,
    pub kind: String,
    pub args: String,
}

impl Request {
    pub fn new(uid: &str, kind: &str, args: &str) -> Request {
        Request { uid: uid.to_string(), kind: kind.to_string(), args: args.to_string() }
    }

    pub fn encode(&self) -> String {
        format!("{}\t{}\t{}", self.uid, self.kind, self.args)
    }

    pub fn parse(frame: &str) -> Option<Request> {
        let mut parts = frame.splitn(3, '\t');
        Some(Request {
            uid: parts.next()?.to_string(),
            kind: parts.next()?.to_string(),
            args: parts.next().unwrap_or_default().to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub uid: String,
    pub ok: bool,
    pub detail: String,
}

impl Response {
    pub fn ok(uid: &str, detail: &str) -> Response {
        Response { uid: uid.to_string(), ok: true, detail: detail.to_string() }
    }

    pub fn err(uid: &str, detail: &str) -> Response {
        Response { uid: uid.to_string(), ok: false, detail: detail.to_string() }
    }

    pub fn encode(&self) -> String {
        format!("{}\t{}\t{}", self.uid, if self.ok { "OK" } else { "ERR" }, self.detail)
    }

    pub fn parse(frame: &str) -> Option<Response> {
        let mut parts = frame.splitn(3, '\t');
        let uid = parts.next()?.to_string();
        let ok = match parts.next()? {
            "OK" => true,
            "ERR" => false,
            _ => return None,
        };
        Some(Response { uid, ok, detail: parts.next().unwrap_or_default().to_string() })
    }
}
