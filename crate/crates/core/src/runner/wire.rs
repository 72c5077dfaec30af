//! Length-prefixed binary frames for driving an environment over a socket.
//!
//! A frame is `len: u32 LE`, then `len` bytes holding a type byte and the
//! payload. Integers are little-endian, reals are IEEE-754 single precision.
//!
//! | type | name  | payload |
//! |------|-------|---------|
//! | 1    | RESET | `episode_seed: u64` |
//! | 2    | STEP  | `action: u8` |
//! | 3    | OBS   | `width: u16, height: u16, rgb: [u8; 3*w*h], depth_len: u32, depth: [f32; depth_len], velocity: [f32; 6], prev_action: u8 (255 = none), prev_reward: f32, reward: f32, done: u8` |
//! | 4    | ERR   | `code: u16, message: utf8` |

use std::io::{Read, Write};
use std::net::{TcpStream, ToSocketAddrs};

use crate::error::{NavError, Result};

pub const MSG_RESET: u8 = 1;
pub const MSG_STEP: u8 = 2;
pub const MSG_OBS: u8 = 3;
pub const MSG_ERR: u8 = 4;

pub const ERR_NOT_RESET: u16 = 100;
pub const ERR_BAD_ACTION: u16 = 101;
pub const ERR_MALFORMED: u16 = 102;
pub const ERR_EPISODE_DONE: u16 = 103;
pub const ERR_INTERNAL: u16 = 104;

/// `prev_action` value meaning no action has been taken yet.
pub const NO_ACTION: u8 = 255;

/// Largest frame body a server accepts from a client.
pub const MAX_REQUEST_LEN: u32 = 64;
/// Largest frame body a client accepts from a server.
pub const MAX_RESPONSE_LEN: u32 = 64 << 20;

#[derive(Clone, Debug, PartialEq)]
pub struct ObsMessage {
    pub width: u16,
    pub height: u16,
    pub rgb: Vec<u8>,
    /// The 4x16 depth grid, or the raw per-pixel depth.
    pub depth: Vec<f32>,
    pub velocity: [f32; 6],
    pub prev_action: u8,
    pub prev_reward: f32,
    pub reward: f32,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Reset { episode_seed: u64 },
    Step { action: u8 },
    Obs(ObsMessage),
    Err { code: u16, message: String },
}

impl Message {
    pub fn encode(&self) -> Vec<u8> {
        let mut body = Vec::new();
        match self {
            Message::Reset { episode_seed } => {
                body.push(MSG_RESET);
                body.extend_from_slice(&episode_seed.to_le_bytes());
            }
            Message::Step { action } => {
                body.push(MSG_STEP);
                body.push(*action);
            }
            Message::Obs(o) => {
                body.reserve(o.rgb.len() + 4 * o.depth.len() + 48);
                body.push(MSG_OBS);
                body.extend_from_slice(&o.width.to_le_bytes());
                body.extend_from_slice(&o.height.to_le_bytes());
                body.extend_from_slice(&o.rgb);
                body.extend_from_slice(&(o.depth.len() as u32).to_le_bytes());
                for v in o.depth.iter().chain(&o.velocity) {
                    body.extend_from_slice(&v.to_le_bytes());
                }
                body.push(o.prev_action);
                body.extend_from_slice(&o.prev_reward.to_le_bytes());
                body.extend_from_slice(&o.reward.to_le_bytes());
                body.push(o.done as u8);
            }
            Message::Err { code, message } => {
                body.push(MSG_ERR);
                body.extend_from_slice(&code.to_le_bytes());
                body.extend_from_slice(message.as_bytes());
            }
        }
        let mut frame = Vec::with_capacity(body.len() + 4);
        frame.extend_from_slice(&(body.len() as u32).to_le_bytes());
        frame.extend_from_slice(&body);
        frame
    }

    /// Decodes one frame body (everything after the length prefix).
    pub fn decode(body: &[u8]) -> Result<Message> {
        let mut r = Reader { buf: body, pos: 0 };
        let msg = match r.u8()? {
            MSG_RESET => Message::Reset { episode_seed: u64::from_le_bytes(r.array()?) },
            MSG_STEP => Message::Step { action: r.u8()? },
            MSG_OBS => {
                let width = u16::from_le_bytes(r.array()?);
                let height = u16::from_le_bytes(r.array()?);
                let rgb = r.take(3 * width as usize * height as usize)?.to_vec();
                let n = u32::from_le_bytes(r.array()?) as usize;
                if n > r.remaining() / 4 {
                    return Err(malformed("depth length exceeds the frame"));
                }
                let depth = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
                let mut velocity = [0.0; 6];
                for v in &mut velocity {
                    *v = r.f32()?;
                }
                let prev_action = r.u8()?;
                let prev_reward = r.f32()?;
                let reward = r.f32()?;
                let done = match r.u8()? {
                    0 => false,
                    1 => true,
                    b => return Err(malformed(&format!("done flag {b}"))),
                };
                Message::Obs(ObsMessage { width, height, rgb, depth, velocity, prev_action, prev_reward, reward, done })
            }
            MSG_ERR => {
                let code = u16::from_le_bytes(r.array()?);
                let message = String::from_utf8(r.take(r.remaining())?.to_vec())
                    .map_err(|_| malformed("error message is not utf-8"))?;
                Message::Err { code, message }
            }
            t => return Err(malformed(&format!("unknown message type {t}"))),
        };
        if r.remaining() != 0 {
            return Err(malformed(&format!("{} trailing bytes", r.remaining())));
        }
        Ok(msg)
    }
}

fn malformed(what: &str) -> NavError {
    NavError::Data(format!("malformed frame: {what}"))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(malformed("payload shorter than its fields"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }
}

/// Reads one frame body. `Ok(None)` means the peer closed before a new frame.
pub fn read_frame<R: Read>(r: &mut R, max_len: u32) -> Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(malformed("truncated length prefix")),
            n => got += n,
        }
    }
    let len = u32::from_le_bytes(len);
    if len == 0 || len > max_len {
        return Err(malformed(&format!("frame length {len}")));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body).map_err(|_| malformed("truncated frame body"))?;
    Ok(Some(body))
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> Result<()> {
    w.write_all(&msg.encode())?;
    w.flush()?;
    Ok(())
}

/// Blocking client for one environment session.
pub struct EnvClient {
    stream: TcpStream,
}

impl EnvClient {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }

    pub fn request(&mut self, msg: &Message) -> Result<Message> {
        write_message(&mut self.stream, msg)?;
        let body = read_frame(&mut self.stream, MAX_RESPONSE_LEN)?
            .ok_or_else(|| NavError::Data("server closed the connection".into()))?;
        Message::decode(&body)
    }

    fn expect_obs(&mut self, msg: &Message) -> Result<ObsMessage> {
        match self.request(msg)? {
            Message::Obs(o) => Ok(o),
            Message::Err { code, message } => Err(NavError::Usage(format!("server error {code}: {message}"))),
            other => Err(NavError::Data(format!("unexpected reply {other:?}"))),
        }
    }

    pub fn reset(&mut self, episode_seed: u64) -> Result<ObsMessage> {
        self.expect_obs(&Message::Reset { episode_seed })
    }

    pub fn step(&mut self, action: u8) -> Result<ObsMessage> {
        self.expect_obs(&Message::Step { action })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn obs() -> ObsMessage {
        ObsMessage {
            width: 2,
            height: 1,
            rgb: vec![1, 2, 3, 4, 5, 6],
            depth: vec![0.25; 64],
            velocity: [0.5, -0.5, 0.0, 0.1, 0.0, 0.0],
            prev_action: NO_ACTION,
            prev_reward: 0.0,
            reward: 10.0,
            done: true,
        }
    }

    #[test]
    fn golden_frames() {
        assert_eq!(Message::Reset { episode_seed: 7 }.encode(), vec![9, 0, 0, 0, 1, 7, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(Message::Step { action: 3 }.encode(), vec![2, 0, 0, 0, 2, 3]);
        assert_eq!(
            Message::Err { code: 101, message: "x".into() }.encode(),
            vec![4, 0, 0, 0, 4, 101, 0, b'x']
        );
        let f = Message::Obs(obs()).encode();
        assert_eq!(f.len(), 4 + 1 + 4 + 6 + 4 + 256 + 24 + 1 + 4 + 4 + 1);
        assert_eq!(u32::from_le_bytes(f[..4].try_into().unwrap()) as usize, f.len() - 4);
        assert_eq!(&f[4..15], &[3, 2, 0, 1, 0, 1, 2, 3, 4, 5, 6]);
        assert_eq!(&f[15..19], &64u32.to_le_bytes());
        assert_eq!(&f[19..23], &0.25f32.to_le_bytes());
        assert_eq!(f[f.len() - 1], 1);
    }

    #[test]
    fn round_trip() {
        for m in [
            Message::Reset { episode_seed: u64::MAX },
            Message::Step { action: 7 },
            Message::Obs(obs()),
            Message::Err { code: 100, message: "step before reset".into() },
        ] {
            let f = m.encode();
            let body = read_frame(&mut &f[..], MAX_RESPONSE_LEN).unwrap().unwrap();
            assert_eq!(Message::decode(&body).unwrap(), m);
        }
    }

    #[test]
    fn malformed_bodies() {
        assert!(Message::decode(&[]).is_err());
        assert!(Message::decode(&[9]).is_err());
        assert!(Message::decode(&[MSG_STEP]).is_err());
        assert!(Message::decode(&[MSG_STEP, 1, 2]).is_err());
        assert!(Message::decode(&[MSG_RESET, 1, 2, 3]).is_err());
        let mut f = Message::Obs(obs()).encode();
        *f.last_mut().unwrap() = 2;
        assert!(Message::decode(&f[4..]).is_err());
        assert!(read_frame(&mut &[0u8, 0, 0, 0][..], 64).is_err());
        assert!(read_frame(&mut &[100u8, 0, 0, 0, 1][..], 64).is_err());
        assert!(read_frame(&mut &[1u8, 0][..], 64).is_err());
        assert!(read_frame(&mut &[][..], 64).unwrap().is_none());
    }

    proptest! {
        #[test]
        fn decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..300)) {
            let _ = Message::decode(&bytes);
            let _ = read_frame(&mut &bytes[..], MAX_RESPONSE_LEN);
        }
    }
}
