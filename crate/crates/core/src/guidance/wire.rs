//! Binary framing for the remote guidance protocol.
//!
//! ```text
//! "SDRG" | 0x01 | u32 LE header length | UTF-8 JSON header | f32 LE tensors
//! ```
//!
//! Tensors follow the header in the order its `"tensors"` list declares,
//! row-major. Requests carry `image` and `cond` (`width * height` floats
//! each); responses carry a single `grad` tensor whose shape follows from
//! `space` and `pool`.

use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 4] = b"SDRG";
pub const VERSION: u8 = 0x01;
const PREFIX_LEN: usize = 9;
const MAX_HEADER: usize = 1 << 20;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ProtocolError {
    #[error("frame too short ({0} bytes)")]
    Truncated(usize),
    #[error("bad magic {0:?}")]
    Magic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    Version(u8),
    #[error("header length {0} exceeds frame or limit")]
    HeaderLength(usize),
    #[error("invalid header JSON: {0}")]
    Header(String),
    #[error("unexpected tensor list {0:?}")]
    Tensors(Vec<String>),
    #[error("payload holds {got} bytes, expected {expected}")]
    Payload { expected: usize, got: usize },
    #[error("gradient shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("channels must be 1, got {0}")]
    Channels(u32),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct RequestHeader {
    prompt: String,
    negative_prompt: Option<String>,
    omega: f64,
    timestep: Option<u32>,
    width: u32,
    height: u32,
    channels: u32,
    tensors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceRequest {
    pub prompt: String,
    pub negative_prompt: Option<String>,
    pub omega: f64,
    pub timestep: Option<u32>,
    pub width: u32,
    pub height: u32,
    /// Augmented composite, row-major.
    pub image: Vec<f32>,
    /// Augmented condition sketch, row-major.
    pub cond: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradSpace {
    Pixel,
    Latent,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct ResponseHeader {
    tensors: Vec<String>,
    loss: Option<f64>,
    space: GradSpace,
    pool: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceResponse {
    pub loss: Option<f64>,
    pub space: GradSpace,
    pub pool: u32,
    pub grad: Vec<f32>,
}

impl GuidanceResponse {
    /// Number of gradient values implied by a request of `width x height`.
    pub fn expected_len(&self, width: u32, height: u32) -> Option<usize> {
        match self.space {
            GradSpace::Pixel => Some(width as usize * height as usize),
            GradSpace::Latent => {
                let k = self.pool;
                (k >= 1 && width.is_multiple_of(k) && height.is_multiple_of(k))
                    .then(|| (width / k) as usize * (height / k) as usize)
            }
        }
    }

    pub fn validate_for(&self, req: &GuidanceRequest) -> Result<(), ProtocolError> {
        let expected = self
            .expected_len(req.width, req.height)
            .ok_or(ProtocolError::Shape { expected: 0, got: self.grad.len() })?;
        if expected != self.grad.len() {
            return Err(ProtocolError::Shape {
                expected,
                got: self.grad.len(),
            });
        }
        Ok(())
    }
}

fn frame(header: &[u8], tensors: &[&[f32]]) -> Vec<u8> {
    let payload: usize = tensors.iter().map(|t| t.len() * 4).sum();
    let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + payload);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header);
    for t in tensors {
        for v in *t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Splits a frame into its JSON header bytes and tensor payload.
fn unframe(bytes: &[u8]) -> Result<(&[u8], &[u8]), ProtocolError> {
    if bytes.len() < PREFIX_LEN {
        return Err(ProtocolError::Truncated(bytes.len()));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(ProtocolError::Magic(magic));
    }
    if bytes[4] != VERSION {
        return Err(ProtocolError::Version(bytes[4]));
    }
    let len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    if len > MAX_HEADER || PREFIX_LEN + len > bytes.len() {
        return Err(ProtocolError::HeaderLength(len));
    }
    Ok((&bytes[PREFIX_LEN..PREFIX_LEN + len], &bytes[PREFIX_LEN + len..]))
}

fn floats(payload: &[u8]) -> Vec<f32> {
    payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

pub fn encode_request(req: &GuidanceRequest) -> Vec<u8> {
    let header = RequestHeader {
        prompt: req.prompt.clone(),
        negative_prompt: req.negative_prompt.clone(),
        omega: req.omega,
        timestep: req.timestep,
        width: req.width,
        height: req.height,
        channels: 1,
        tensors: names(&["image", "cond"]),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    frame(&json, &[&req.image, &req.cond])
}

pub fn decode_request(bytes: &[u8]) -> Result<GuidanceRequest, ProtocolError> {
    let (header, payload) = unframe(bytes)?;
    let h: RequestHeader =
        serde_json::from_slice(header).map_err(|e| ProtocolError::Header(e.to_string()))?;
    if h.channels != 1 {
        return Err(ProtocolError::Channels(h.channels));
    }
    if h.tensors != names(&["image", "cond"]) {
        return Err(ProtocolError::Tensors(h.tensors));
    }
    let n = h.width as usize * h.height as usize;
    if payload.len() != 2 * 4 * n {
        return Err(ProtocolError::Payload {
            expected: 8 * n,
            got: payload.len(),
        });
    }
    let all = floats(payload);
    let (image, cond) = all.split_at(n);
    Ok(GuidanceRequest {
        prompt: h.prompt,
        negative_prompt: h.negative_prompt,
        omega: h.omega,
        timestep: h.timestep,
        width: h.width,
        height: h.height,
        image: image.to_vec(),
        cond: cond.to_vec(),
    })
}

pub fn encode_response(resp: &GuidanceResponse) -> Vec<u8> {
    let header = ResponseHeader {
        tensors: names(&["grad"]),
        loss: resp.loss,
        space: resp.space,
        pool: resp.pool,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    frame(&json, &[&resp.grad])
}

/// Decodes a response frame. The gradient length is checked against the
/// originating request separately, see [`GuidanceResponse::validate_for`].
pub fn decode_response(bytes: &[u8]) -> Result<GuidanceResponse, ProtocolError> {
    let (header, payload) = unframe(bytes)?;
    let h: ResponseHeader =
        serde_json::from_slice(header).map_err(|e| ProtocolError::Header(e.to_string()))?;
    if h.tensors != names(&["grad"]) {
        return Err(ProtocolError::Tensors(h.tensors));
    }
    if payload.len() % 4 != 0 {
        return Err(ProtocolError::Payload {
            expected: payload.len() / 4 * 4,
            got: payload.len(),
        });
    }
    Ok(GuidanceResponse {
        loss: h.loss,
        space: h.space,
        pool: h.pool,
        grad: floats(payload),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_magic_and_version() {
        let req = GuidanceRequest {
            prompt: "x".into(),
            negative_prompt: None,
            omega: 1.0,
            timestep: None,
            width: 1,
            height: 1,
            image: vec![1.0],
            cond: vec![1.0],
        };
        let mut b = encode_request(&req);
        b[0] = b'X';
        assert!(matches!(decode_request(&b), Err(ProtocolError::Magic(_))));
        let mut b = encode_request(&req);
        b[4] = 2;
        assert_eq!(decode_request(&b), Err(ProtocolError::Version(2)));
        let b = encode_request(&req);
        assert!(matches!(
            decode_request(&b[..b.len() - 1]),
            Err(ProtocolError::Payload { .. })
        ));
        assert_eq!(decode_request(&b[..3]), Err(ProtocolError::Truncated(3)));
    }

    #[test]
    fn latent_response_shape() {
        let resp = GuidanceResponse {
            loss: None,
            space: GradSpace::Latent,
            pool: 8,
            grad: vec![0.0; 4],
        };
        assert_eq!(resp.expected_len(16, 16), Some(4));
        assert_eq!(resp.expected_len(15, 16), None);
    }
}
