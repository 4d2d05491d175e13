//! MPI-plane frame codec.
//!
//! ```text
//! +----------------+----------+----------+---------------+-----------+
//! | length (u32 BE)| src (u16)| dst (u16)| hop_count(u16)| payload   |
//! +----------------+----------+----------+---------------+-----------+
//! ```
//!
//! `length` counts payload bytes only. A connection opens with a 2-byte
//! big-endian node id so the acceptor learns which neighbor dialed in.

use std::io::{self, Read, Write};

use super::topology::NodeId;

pub const HEADER_LEN: usize = 10;
pub const MAX_PAYLOAD: u32 = 16 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub src: NodeId,
    pub dst: NodeId,
    pub hop_count: u16,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + self.payload.len());
        buf.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        buf.extend_from_slice(&self.src.to_be_bytes());
        buf.extend_from_slice(&self.dst.to_be_bytes());
        buf.extend_from_slice(&self.hop_count.to_be_bytes());
        buf.extend_from_slice(&self.payload);
        buf
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        if self.payload.len() > MAX_PAYLOAD as usize {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "payload too large"));
        }
        w.write_all(&self.encode())?;
        w.flush()
    }

    /// Reads one frame. `Ok(None)` means the peer closed cleanly between frames.
    pub fn read_from<R: Read>(r: &mut R) -> io::Result<Option<Frame>> {
        let mut header = [0u8; HEADER_LEN];
        match read_exact_or_eof(r, &mut header)? {
            false => return Ok(None),
            true => {}
        }
        let len = u32::from_be_bytes([header[0], header[1], header[2], header[3]]);
        if len > MAX_PAYLOAD {
            return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame too large: {len} bytes")));
        }
        let mut payload = vec![0u8; len as usize];
        r.read_exact(&mut payload)?;
        Ok(Some(Frame {
            src: u16::from_be_bytes([header[4], header[5]]),
            dst: u16::from_be_bytes([header[6], header[7]]),
            hop_count: u16::from_be_bytes([header[8], header[9]]),
            payload,
        }))
    }
}

fn read_exact_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(k) => filled += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

pub fn write_hello<W: Write>(w: &mut W, id: NodeId) -> io::Result<()> {
    w.write_all(&id.to_be_bytes())?;
    w.flush()
}

pub fn read_hello<R: Read>(r: &mut R) -> io::Result<NodeId> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_be_bytes(b))
}
