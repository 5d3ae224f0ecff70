//! `FPDB` container: magic, version u32, count u64, dim u32, then per
//! record an id and a SMILES (u32 length + UTF-8 bytes each) and `dim` u16
//! counts, closed by a CRC-64/XZ of all preceding bytes. Little-endian.

use std::path::Path;

use crate::chem::FINGERPRINT_BITS;

use super::{DbRecord, FingerprintDb, ScreenError};

pub const FPDB_MAGIC: &[u8; 4] = b"FPDB";
pub const FPDB_VERSION: u32 = 1;
const CRC: crc::Crc<u64> = crc::Crc::<u64>::new(&crc::CRC_64_XZ);

fn corrupt(m: &str) -> ScreenError {
    ScreenError::CorruptFile(m.to_string())
}

impl FingerprintDb {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.len() * (FINGERPRINT_BITS * 2 + 32));
        out.extend_from_slice(FPDB_MAGIC);
        out.extend_from_slice(&FPDB_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(FINGERPRINT_BITS as u32).to_le_bytes());
        for r in self.records() {
            for s in [&r.id, &r.smiles] {
                out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
            r.counts.iter().for_each(|c| out.extend_from_slice(&c.to_le_bytes()));
        }
        let crc = CRC.checksum(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<FingerprintDb, ScreenError> {
        if bytes.len() < 28 || &bytes[..4] != FPDB_MAGIC {
            return Err(corrupt("missing FPDB header"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FPDB_VERSION {
            return Err(ScreenError::VersionMismatch {
                found: version,
                expected: FPDB_VERSION,
            });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        if CRC.checksum(body) != u64::from_le_bytes(tail.try_into().expect("8 bytes")) {
            return Err(corrupt("checksum mismatch"));
        }
        let count = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes"));
        let dim = u32::from_le_bytes(body[16..20].try_into().expect("4 bytes")) as usize;
        if dim != FINGERPRINT_BITS {
            return Err(corrupt("fingerprint width"));
        }
        let mut r = Cursor { buf: body, pos: 20 };
        let mut records = Vec::new();
        for _ in 0..count {
            let id = r.text()?;
            let smiles = r.text()?;
            let counts = r
                .take(dim * 2)?
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect();
            records.push(DbRecord { id, smiles, counts });
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        FingerprintDb::from_records(records)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_bytes())
    }

    /// Reads a database file; I/O failures surface as `CorruptFile`.
    pub fn load(path: &Path) -> Result<FingerprintDb, ScreenError> {
        let bytes = std::fs::read(path).map_err(|e| ScreenError::CorruptFile(format!("{}: {e}", path.display())))?;
        FingerprintDb::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ScreenError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn text(&mut self) -> Result<String, ScreenError> {
        let n = u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("text is not UTF-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::super::build_db;
    use super::*;

    #[test]
    fn roundtrip_and_damage() {
        let (db, _) = build_db("CCO a\nc1ccccc1 b\nCC(=O)N c\n").unwrap();
        let bytes = db.to_bytes();
        assert_eq!(FingerprintDb::from_bytes(&bytes).unwrap(), db);
        for cut in [0, 10, 30, bytes.len() - 1] {
            assert!(matches!(FingerprintDb::from_bytes(&bytes[..cut]), Err(ScreenError::CorruptFile(_))));
        }
        let mut v = bytes.clone();
        v[4] = 9;
        assert!(matches!(FingerprintDb::from_bytes(&v), Err(ScreenError::VersionMismatch { found: 9, .. })));
        let mut f = bytes;
        f[100] ^= 0x40;
        assert!(matches!(FingerprintDb::from_bytes(&f), Err(ScreenError::CorruptFile(_))));
    }

    #[test]
    fn build_is_byte_identical() {
        let corpus: String = (0..200).map(|i| format!("{}O m{i}\n", "C".repeat(1 + i % 13))).collect();
        let a = build_db(&corpus).unwrap().0.to_bytes();
        let b = build_db(&corpus).unwrap().0.to_bytes();
        assert_eq!(a, b);
    }
}
