//! Little-endian binary snapshots of spinor, gauge and clover fields.
//!
//! Header: magic (4 bytes), version u32, dims 4 x u32, s u32, b u32,
//! layout u8, followed by interleaved (re, im) f64 pairs in storage order.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use mrhs_core::field::{BlockField, Layout, LayoutPolicy};
use mrhs_core::gauge::{CloverField, GaugeField, CLOVER_SITE};
use mrhs_core::geometry::{LatticeGeometry, NDIM};
use mrhs_core::C64;

use crate::error::{Error, Result};

pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 4 * NDIM + 4 + 4 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotKind {
    Spinor,
    Gauge,
    Clover,
}

impl SnapshotKind {
    pub fn magic(self) -> &'static [u8; 4] {
        match self {
            SnapshotKind::Spinor => b"LQML",
            SnapshotKind::Gauge => b"LQMG",
            SnapshotKind::Clover => b"LQMC",
        }
    }

    fn from_magic(m: &[u8]) -> Option<Self> {
        [SnapshotKind::Spinor, SnapshotKind::Gauge, SnapshotKind::Clover]
            .into_iter()
            .find(|k| k.magic() == m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub kind: SnapshotKind,
    pub version: u32,
    pub dims: [usize; NDIM],
    pub s: usize,
    pub b: usize,
    /// 1 or 2 for spinors, 0 for gauge and clover.
    pub layout: u8,
}

impl Header {
    fn values(&self) -> usize {
        self.dims.iter().product::<usize>() * self.s * self.b
    }

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(self.kind.magic());
        out.extend_from_slice(&self.version.to_le_bytes());
        for d in self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.s as u32).to_le_bytes());
        out.extend_from_slice(&(self.b as u32).to_le_bytes());
        out.push(self.layout);
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!("{} bytes is shorter than the header", bytes.len())));
        }
        let kind = SnapshotKind::from_magic(&bytes[..4])
            .ok_or_else(|| Error::Format(format!("unknown magic {:?}", String::from_utf8_lossy(&bytes[..4]))))?;
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
        let version = word(0);
        if version != VERSION {
            return Err(Error::Format(format!("version {version}, expected {VERSION}")));
        }
        let mut dims = [0; NDIM];
        for (d, v) in dims.iter_mut().enumerate() {
            *v = word(1 + d) as usize;
        }
        Ok(Self {
            kind,
            version,
            dims,
            s: word(5) as usize,
            b: word(6) as usize,
            layout: bytes[HEADER_LEN - 1],
        })
    }
}

fn encode(header: &Header, data: &[C64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + data.len() * 16);
    header.encode(&mut out);
    for z in data {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    out
}

fn decode(bytes: &[u8], want: SnapshotKind) -> Result<(Header, Vec<C64>)> {
    let header = Header::decode(bytes)?;
    if header.kind != want {
        return Err(Error::Format(format!("expected a {want:?} snapshot, found {:?}", header.kind)));
    }
    let body = &bytes[HEADER_LEN..];
    let n = header.values();
    if body.len() != n * 16 {
        return Err(Error::Format(format!("payload has {} bytes, header implies {}", body.len(), n * 16)));
    }
    let data = body
        .chunks_exact(16)
        .map(|c| {
            C64::new(
                f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
            )
        })
        .collect();
    Ok((header, data))
}

fn geometry(header: &Header) -> Result<LatticeGeometry> {
    Ok(LatticeGeometry::new(header.dims)?)
}

pub fn encode_spinor(geom: &LatticeGeometry, v: &BlockField) -> Result<Vec<u8>> {
    if v.n_sites() != geom.n_sites() {
        return Err(Error::Format(format!("field has {} sites, lattice {}", v.n_sites(), geom.n_sites())));
    }
    let h = Header {
        kind: SnapshotKind::Spinor,
        version: VERSION,
        dims: geom.dims(),
        s: v.components(),
        b: v.b(),
        layout: v.policy().layout().number(),
    };
    Ok(encode(&h, v.data()))
}

pub fn decode_spinor(bytes: &[u8]) -> Result<(LatticeGeometry, BlockField)> {
    let (h, data) = decode(bytes, SnapshotKind::Spinor)?;
    let geom = geometry(&h)?;
    let policy = LayoutPolicy::new(Layout::from_number(h.layout)?, h.b)?;
    let field = BlockField::from_raw(geom.n_sites(), h.s, policy, data)?;
    Ok((geom, field))
}

pub fn encode_gauge(u: &GaugeField) -> Vec<u8> {
    let h = Header {
        kind: SnapshotKind::Gauge,
        version: VERSION,
        dims: u.geometry().dims(),
        s: NDIM * 9,
        b: 1,
        layout: 0,
    };
    encode(&h, u.data())
}

pub fn decode_gauge(bytes: &[u8]) -> Result<GaugeField> {
    let (h, data) = decode(bytes, SnapshotKind::Gauge)?;
    if h.s != NDIM * 9 || h.b != 1 {
        return Err(Error::Format(format!("gauge snapshot with s={} b={}", h.s, h.b)));
    }
    Ok(GaugeField::from_raw(&geometry(&h)?, data)?)
}

pub fn encode_clover(c: &CloverField) -> Vec<u8> {
    let h = Header {
        kind: SnapshotKind::Clover,
        version: VERSION,
        dims: c.geometry().dims(),
        s: CLOVER_SITE,
        b: 1,
        layout: 0,
    };
    encode(&h, c.data())
}

pub fn decode_clover(bytes: &[u8]) -> Result<CloverField> {
    let (h, data) = decode(bytes, SnapshotKind::Clover)?;
    if h.s != CLOVER_SITE || h.b != 1 {
        return Err(Error::Format(format!("clover snapshot with s={} b={}", h.s, h.b)));
    }
    Ok(CloverField::from_raw(&geometry(&h)?, data)?)
}

/// Hex SHA-256 of the exact bytes of `data`.
pub fn checksum(data: &[C64]) -> String {
    let mut h = Sha256::new();
    for z in data {
        h.update(z.re.to_le_bytes());
        h.update(z.im.to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mrhs_core::gauge::{CloverMode, GaugeMode};

    fn geom() -> LatticeGeometry {
        LatticeGeometry::new([4, 2, 2, 2]).unwrap()
    }

    #[test]
    fn spinor_roundtrip_both_layouts() {
        for layout in [Layout::ColumnMajor, Layout::RowMajor] {
            let pol = LayoutPolicy::new(layout, 3).unwrap();
            let v = BlockField::random(geom().n_sites(), 12, pol, 5);
            let bytes = encode_spinor(&geom(), &v).unwrap();
            assert_eq!(&bytes[..4], b"LQML");
            assert_eq!(bytes[HEADER_LEN - 1], layout.number());
            assert_eq!(bytes.len(), HEADER_LEN + v.data().len() * 16);
            let (g, w) = decode_spinor(&bytes).unwrap();
            assert_eq!(g, geom());
            assert_eq!(w, v);
        }
    }

    #[test]
    fn header_is_little_endian() {
        let v = BlockField::zeros(geom().n_sites(), 12, LayoutPolicy::unblocked());
        let bytes = encode_spinor(&geom(), &v).unwrap();
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[4, 0, 0, 0]);
        assert_eq!(&bytes[24..28], &[12, 0, 0, 0]);
        assert_eq!(&bytes[28..32], &[1, 0, 0, 0]);
    }

    #[test]
    fn gauge_and_clover_roundtrip() {
        let u = GaugeField::generate(&geom(), GaugeMode::Random, 3);
        assert_eq!(decode_gauge(&encode_gauge(&u)).unwrap(), u);
        let c = CloverField::generate(&geom(), CloverMode::RandomHermitian { scale: 0.1 }, 4);
        assert_eq!(decode_clover(&encode_clover(&c)).unwrap(), c);
    }

    #[test]
    fn rejects_wrong_kind_and_truncation() {
        let u = GaugeField::unit(&geom());
        let bytes = encode_gauge(&u);
        assert!(decode_clover(&bytes).is_err());
        assert!(decode_gauge(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_gauge(&bytes[..10]).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(decode_gauge(&bad).is_err());
    }

    #[test]
    fn checksum_is_deterministic() {
        let a = GaugeField::generate(&geom(), GaugeMode::Random, 7);
        let b = GaugeField::generate(&geom(), GaugeMode::Random, 7);
        let c = GaugeField::generate(&geom(), GaugeMode::Random, 8);
        assert_eq!(checksum(a.data()), checksum(b.data()));
        assert_ne!(checksum(a.data()), checksum(c.data()));
        assert_eq!(checksum(&[]).len(), 64);
    }
}
