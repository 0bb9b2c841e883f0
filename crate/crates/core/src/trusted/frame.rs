//! Length-prefixed binary messages between host and vault.
//!
//! Request: `u32 len | u8 op | u16 site_len | site | u8 count | (u8 domain | u32 len | bytes)*`
//! Response: `u32 len | u8 status | payload`, where status 0 carries either a
//! ciphertext (`u8 domain | u32 len | bytes`) or a single boolean byte, and
//! status 1 carries the fault as JSON. `len` counts the bytes after itself.

use thiserror::Error;

use crate::group::Group;
use crate::hase::{Ciphertext, Domain};
use crate::trusted::{Fault, FaultReason, Session, TrustedModule, VaultOp};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("frame is truncated")]
    Truncated,
    #[error("frame length field disagrees with its contents")]
    Length,
    #[error("unknown code {0}")]
    Code(u8),
    #[error("site identifier is not UTF-8")]
    Utf8,
    #[error("frame carries too many ciphertexts")]
    TooMany,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Request {
    pub op: VaultOp,
    pub site: String,
    /// Ciphertexts as (domain, bytes).
    pub args: Vec<(Domain, Vec<u8>)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Response {
    Ciphertext(Domain, Vec<u8>),
    Bool(bool),
    Fault(Fault),
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FrameError> {
        if self.buf.len() < n {
            return Err(FrameError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, FrameError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FrameError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("two bytes")))
    }

    fn u32(&mut self) -> Result<u32, FrameError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn ciphertext(&mut self) -> Result<(Domain, Vec<u8>), FrameError> {
        let code = self.u8()?;
        let domain = Domain::from_code(code).ok_or(FrameError::Code(code))?;
        let len = self.u32()? as usize;
        Ok((domain, self.take(len)?.to_vec()))
    }
}

fn body(frame: &[u8]) -> Result<Reader<'_>, FrameError> {
    let mut r = Reader { buf: frame };
    let len = r.u32()? as usize;
    if r.buf.len() != len {
        return Err(FrameError::Length);
    }
    Ok(r)
}

fn finish(mut payload: Vec<u8>) -> Vec<u8> {
    let mut out = (payload.len() as u32).to_be_bytes().to_vec();
    out.append(&mut payload);
    out
}

fn put_ciphertext(out: &mut Vec<u8>, domain: Domain, bytes: &[u8]) {
    out.push(domain.code());
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(bytes);
}

impl Request {
    pub fn encode(&self) -> Result<Vec<u8>, FrameError> {
        let count = u8::try_from(self.args.len()).map_err(|_| FrameError::TooMany)?;
        let site_len = u16::try_from(self.site.len()).map_err(|_| FrameError::Length)?;
        let mut p = vec![self.op.code()];
        p.extend_from_slice(&site_len.to_be_bytes());
        p.extend_from_slice(self.site.as_bytes());
        p.push(count);
        for (d, b) in &self.args {
            put_ciphertext(&mut p, *d, b);
        }
        Ok(finish(p))
    }

    pub fn decode(frame: &[u8]) -> Result<Request, FrameError> {
        let mut r = body(frame)?;
        let code = r.u8()?;
        let op = VaultOp::from_code(code).ok_or(FrameError::Code(code))?;
        let site_len = r.u16()? as usize;
        let site = String::from_utf8(r.take(site_len)?.to_vec()).map_err(|_| FrameError::Utf8)?;
        let count = r.u8()?;
        let args = (0..count).map(|_| r.ciphertext()).collect::<Result<_, _>>()?;
        if !r.buf.is_empty() {
            return Err(FrameError::Length);
        }
        Ok(Request { op, site, args })
    }
}

impl Response {
    pub fn encode(&self) -> Vec<u8> {
        let mut p = Vec::new();
        match self {
            Response::Ciphertext(d, b) => {
                p.push(0);
                put_ciphertext(&mut p, *d, b);
            }
            Response::Bool(v) => {
                p.push(0);
                p.push(*v as u8);
            }
            Response::Fault(f) => {
                p.push(1);
                p.extend(serde_json::to_vec(f).expect("serialisable"));
            }
        }
        finish(p)
    }

    pub fn decode(frame: &[u8]) -> Result<Response, FrameError> {
        let mut r = body(frame)?;
        match r.u8()? {
            0 if r.buf.len() == 1 => Ok(Response::Bool(r.u8()? != 0)),
            0 => {
                let (d, b) = r.ciphertext()?;
                if !r.buf.is_empty() {
                    return Err(FrameError::Length);
                }
                Ok(Response::Ciphertext(d, b))
            }
            1 => serde_json::from_slice(r.buf).map(Response::Fault).map_err(|_| FrameError::Truncated),
            c => Err(FrameError::Code(c)),
        }
    }
}

impl Session {
    /// Serves one request frame. Malformed frames latch a fault like any
    /// other failed request.
    pub fn handle_frame(&mut self, frame: &[u8]) -> Vec<u8> {
        self.serve(frame).encode()
    }

    fn serve(&mut self, frame: &[u8]) -> Response {
        let req = match Request::decode(frame) {
            Ok(r) => r,
            Err(_) => return Response::Fault(self.latch("", VaultOp::Verify, FaultReason::Malformed)),
        };
        let Some((ga, gm)) = self.groups() else {
            return Response::Fault(Fault { site: req.site, op: req.op, reason: FaultReason::NotProvisioned });
        };
        let mut cts = Vec::with_capacity(req.args.len());
        for (d, b) in &req.args {
            match Ciphertext::from_bytes(*d, b, &ga, &gm) {
                Ok(c) => cts.push(c),
                Err(_) => return Response::Fault(self.latch(&req.site, req.op, FaultReason::Malformed)),
            }
        }
        let to_resp = |c: Ciphertext| Response::Ciphertext(c.domain(), c.to_bytes(&ga, &gm));
        let out = match (req.op, cts.as_slice()) {
            (VaultOp::ToMul, [c]) => self.to_mul(&req.site, c).map(to_resp),
            (VaultOp::ToAdd, [c]) => self.to_add(&req.site, c).map(to_resp),
            (VaultOp::Cmp, [l]) => self.compare(&req.site, l, None).map(Response::Bool),
            (VaultOp::Cmp, [l, r]) => self.compare(&req.site, l, Some(r)).map(Response::Bool),
            (VaultOp::Verify, [c]) => Ok(Response::Bool(self.verify_result(&req.site, c))),
            _ => Err(self.latch(&req.site, req.op, FaultReason::Malformed)),
        };
        out.unwrap_or_else(Response::Fault)
    }

    fn latch(&mut self, site: &str, op: VaultOp, reason: FaultReason) -> Fault {
        let f = Fault { site: site.to_string(), op, reason };
        self.fault.get_or_insert(f.clone());
        f
    }

    fn groups(&self) -> Option<(Group, Group)> {
        let p = self.prov.as_ref()?;
        Some((p.keys.add.sk.group().clone(), p.keys.mul.sk.group().clone()))
    }
}

/// Host-side handle that reaches a session only through encoded frames.
pub struct FramedModule<'s> {
    session: &'s mut Session,
    add_group: Group,
    mul_group: Group,
    /// Bytes sent and received, for reports.
    pub traffic: u64,
}

impl<'s> FramedModule<'s> {
    pub fn new(session: &'s mut Session, add_group: Group, mul_group: Group) -> FramedModule<'s> {
        FramedModule { session, add_group, mul_group, traffic: 0 }
    }

    fn call(&mut self, op: VaultOp, site: &str, args: &[&Ciphertext]) -> Result<Response, Fault> {
        let malformed = || Fault { site: site.to_string(), op, reason: FaultReason::Malformed };
        let req = Request {
            op,
            site: site.to_string(),
            args: args.iter().map(|c| (c.domain(), c.to_bytes(&self.add_group, &self.mul_group))).collect(),
        };
        let frame = req.encode().map_err(|_| malformed())?;
        let reply = self.session.handle_frame(&frame);
        self.traffic += (frame.len() + reply.len()) as u64;
        match Response::decode(&reply).map_err(|_| malformed())? {
            Response::Fault(f) => Err(f),
            other => Ok(other),
        }
    }

    fn ciphertext(&self, op: VaultOp, site: &str, r: Response) -> Result<Ciphertext, Fault> {
        let malformed = || Fault { site: site.to_string(), op, reason: FaultReason::Malformed };
        match r {
            Response::Ciphertext(d, b) => {
                Ciphertext::from_bytes(d, &b, &self.add_group, &self.mul_group).map_err(|_| malformed())
            }
            _ => Err(malformed()),
        }
    }
}

impl TrustedModule for FramedModule<'_> {
    fn to_mul(&mut self, site: &str, c: &Ciphertext) -> Result<Ciphertext, Fault> {
        let r = self.call(VaultOp::ToMul, site, &[c])?;
        self.ciphertext(VaultOp::ToMul, site, r)
    }

    fn to_add(&mut self, site: &str, c: &Ciphertext) -> Result<Ciphertext, Fault> {
        let r = self.call(VaultOp::ToAdd, site, &[c])?;
        self.ciphertext(VaultOp::ToAdd, site, r)
    }

    fn compare(&mut self, site: &str, lhs: &Ciphertext, rhs: Option<&Ciphertext>) -> Result<bool, Fault> {
        let args: Vec<&Ciphertext> = std::iter::once(lhs).chain(rhs).collect();
        match self.call(VaultOp::Cmp, site, &args)? {
            Response::Bool(b) => Ok(b),
            _ => Err(Fault { site: site.to_string(), op: VaultOp::Cmp, reason: FaultReason::Malformed }),
        }
    }
}
