//! Generic checkpoint container: magic + version + JSON header + named f32
//! blobs, little-endian. All checkpoint formats (encoders "AIMW", backbone
//! "AIMB", LoRA "AIML", run "AIMR", train state "AIMS") share this skeleton
//! and differ only in magic and header schema.

use crate::error::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

pub const CONTAINER_VERSION: u32 = 1;

pub struct Container {
    pub magic: [u8; 4],
    pub version: u32,
    pub header: String,
    pub blobs: Vec<(String, Vec<f32>)>,
}

pub fn container_to_bytes(c: &Container) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&c.magic);
    buf.extend_from_slice(&c.version.to_le_bytes());
    let h = c.header.as_bytes();
    buf.extend_from_slice(&(h.len() as u32).to_le_bytes());
    buf.extend_from_slice(h);
    buf.extend_from_slice(&(c.blobs.len() as u32).to_le_bytes());
    for (name, data) in &c.blobs {
        let n = name.as_bytes();
        buf.extend_from_slice(&(n.len() as u32).to_le_bytes());
        buf.extend_from_slice(n);
        buf.extend_from_slice(&(data.len() as u32).to_le_bytes());
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn container_from_bytes(buf: &[u8], expect_magic: [u8; 4]) -> Result<Container> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize, what: &str| -> Result<&[u8]> {
        if *pos + n > buf.len() {
            return Err(Error::Format {
                offset: buf.len() as u64,
                what: format!("truncated while reading {what}"),
            });
        }
        let s = &buf[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let magic: [u8; 4] = take(&mut pos, 4, "magic")?.try_into().unwrap();
    if magic != expect_magic {
        return Err(Error::Format {
            offset: 0,
            what: format!(
                "bad magic {:?}, want {:?}",
                String::from_utf8_lossy(&magic),
                String::from_utf8_lossy(&expect_magic)
            ),
        });
    }
    let ver_off = pos as u64;
    let version = u32::from_le_bytes(take(&mut pos, 4, "version")?.try_into().unwrap());
    if version != CONTAINER_VERSION {
        return Err(Error::Format { offset: ver_off, what: format!("unsupported version {version}") });
    }
    let hlen = u32::from_le_bytes(take(&mut pos, 4, "header length")?.try_into().unwrap()) as usize;
    let hoff = pos as u64;
    let header = String::from_utf8(take(&mut pos, hlen, "header")?.to_vec())
        .map_err(|e| Error::Format { offset: hoff, what: format!("header not UTF-8: {e}") })?;
    let n_blobs = u32::from_le_bytes(take(&mut pos, 4, "blob count")?.try_into().unwrap()) as usize;
    let mut blobs = Vec::with_capacity(n_blobs);
    for _ in 0..n_blobs {
        let nlen = u32::from_le_bytes(take(&mut pos, 4, "blob name length")?.try_into().unwrap()) as usize;
        let noff = pos as u64;
        let name = String::from_utf8(take(&mut pos, nlen, "blob name")?.to_vec())
            .map_err(|e| Error::Format { offset: noff, what: format!("blob name not UTF-8: {e}") })?;
        let dlen = u32::from_le_bytes(take(&mut pos, 4, "blob length")?.try_into().unwrap()) as usize;
        let raw = take(&mut pos, dlen * 4, "blob data")?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        blobs.push((name, data));
    }
    if pos != buf.len() {
        return Err(Error::Format {
            offset: pos as u64,
            what: format!("{} trailing bytes after last blob", buf.len() - pos),
        });
    }
    Ok(Container { magic, version, header, blobs })
}

pub fn write_container<P: AsRef<Path>>(path: P, c: &Container) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&container_to_bytes(c))?;
    Ok(())
}

pub fn read_container<P: AsRef<Path>>(path: P, expect_magic: [u8; 4]) -> Result<Container> {
    let mut buf = Vec::new();
    std::fs::File::open(path.as_ref())?.read_to_end(&mut buf)?;
    container_from_bytes(&buf, expect_magic)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_errors() {
        let c = Container {
            magic: *b"AIMW",
            version: CONTAINER_VERSION,
            header: r#"{"d":4}"#.into(),
            blobs: vec![("x.w".into(), vec![1.0, -2.5]), ("x.b".into(), vec![0.0])],
        };
        let bytes = container_to_bytes(&c);
        let back = container_from_bytes(&bytes, *b"AIMW").unwrap();
        assert_eq!(back.header, c.header);
        assert_eq!(back.blobs, c.blobs);
        assert_eq!(container_to_bytes(&back), bytes);
        // wrong magic
        assert!(matches!(
            container_from_bytes(&bytes, *b"AIMB"),
            Err(Error::Format { offset: 0, .. })
        ));
        // truncation
        assert!(container_from_bytes(&bytes[..bytes.len() - 2], *b"AIMW").is_err());
    }
}
