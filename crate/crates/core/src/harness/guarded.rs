use thiserror::Error;

use super::fault::{FaultKind, FaultReport};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("frame of {len} bytes exceeds buffer capacity {capacity}")]
pub struct FrameTooLarge {
    pub len: usize,
    pub capacity: usize,
}

/// One recorded buffer access.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Access {
    pub offset: usize,
    pub len: usize,
    pub site: &'static str,
    pub write: bool,
}

/// A fixed-capacity buffer whose bytes past the loaded data are poisoned.
/// Every access is checked and any touch of a poisoned or out-of-range byte
/// becomes a fault.
#[derive(Clone, Debug)]
pub struct GuardedBuffer {
    name: &'static str,
    storage: Vec<u8>,
    poison: Vec<bool>,
    live_len: usize,
    last: Option<Access>,
    accesses: u64,
}

impl GuardedBuffer {
    pub fn new(name: &'static str, capacity: usize) -> Self {
        GuardedBuffer {
            name,
            storage: vec![0; capacity],
            poison: vec![true; capacity],
            live_len: 0,
            last: None,
            accesses: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.storage.len()
    }

    pub fn live_len(&self) -> usize {
        self.live_len
    }

    pub fn is_poisoned(&self, offset: usize) -> bool {
        self.poison.get(offset).copied().unwrap_or(true)
    }

    pub fn last_access(&self) -> Option<&Access> {
        self.last.as_ref()
    }

    pub fn access_count(&self) -> u64 {
        self.accesses
    }

    /// Copies `frame` in and poisons the tail.
    pub fn load(&mut self, frame: &[u8]) -> Result<(), FrameTooLarge> {
        if frame.len() > self.capacity() {
            return Err(FrameTooLarge { len: frame.len(), capacity: self.capacity() });
        }
        self.storage[..frame.len()].copy_from_slice(frame);
        self.storage[frame.len()..].fill(0);
        self.poison[..frame.len()].fill(false);
        self.poison[frame.len()..].fill(true);
        self.live_len = frame.len();
        self.last = None;
        Ok(())
    }

    pub fn clear(&mut self) {
        self.storage.fill(0);
        self.poison.fill(true);
        self.live_len = 0;
        self.last = None;
    }

    fn check(&mut self, offset: usize, len: usize, site: &'static str, write: bool) -> Result<(), FaultReport> {
        self.accesses += 1;
        self.last = Some(Access { offset, len, site, write });
        let end = offset.checked_add(len);
        let bad = match end {
            Some(end) if end <= self.capacity() => self.poison[offset..end].iter().position(|&p| p).map(|i| offset + i),
            _ => Some(offset.max(self.capacity())),
        };
        match bad {
            None => Ok(()),
            Some(first) => Err(FaultReport::new(
                if write { FaultKind::OobWrite } else { FaultKind::OobRead },
                site,
                format!(
                    "{} offset={offset} len={len} first_bad={first} live={} cap={}",
                    self.name,
                    self.live_len,
                    self.capacity()
                ),
            )),
        }
    }

    pub fn read(&mut self, offset: usize, len: usize, site: &'static str) -> Result<&[u8], FaultReport> {
        self.check(offset, len, site, false)?;
        Ok(&self.storage[offset..offset + len])
    }

    pub fn read_u8(&mut self, offset: usize, site: &'static str) -> Result<u8, FaultReport> {
        Ok(self.read(offset, 1, site)?[0])
    }

    pub fn read_u16(&mut self, offset: usize, site: &'static str) -> Result<u16, FaultReport> {
        let b = self.read(offset, 2, site)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    pub fn read_u32(&mut self, offset: usize, site: &'static str) -> Result<u32, FaultReport> {
        let b = self.read(offset, 4, site)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn write(&mut self, offset: usize, bytes: &[u8], site: &'static str) -> Result<(), FaultReport> {
        self.check(offset, bytes.len(), site, true)?;
        self.storage[offset..offset + bytes.len()].copy_from_slice(bytes);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_poisons_tail() {
        let mut b = GuardedBuffer::new("rx", 1514);
        b.load(&[0xaa; 54]).unwrap();
        assert!(!b.is_poisoned(53));
        assert!((54..1514).all(|i| b.is_poisoned(i)));
        assert_eq!(b.read(0, 54, "t").unwrap().len(), 54);
        let f = b.read(54, 1, "edge").unwrap_err();
        assert_eq!((f.kind, f.site.as_str()), (FaultKind::OobRead, "edge"));
        assert_eq!(b.last_access().unwrap().offset, 54);
    }

    #[test]
    fn full_capacity_has_no_poison() {
        let mut b = GuardedBuffer::new("rx", 64);
        b.load(&[1; 64]).unwrap();
        assert!((0..64).all(|i| !b.is_poisoned(i)));
        assert!(b.read(63, 2, "t").is_err());
        assert_eq!(b.load(&[0; 65]), Err(FrameTooLarge { len: 65, capacity: 64 }));
    }

    #[test]
    fn straddling_write_faults() {
        let mut b = GuardedBuffer::new("rx", 32);
        b.load(&[0; 10]).unwrap();
        b.write(8, &[1, 2], "w").unwrap();
        let f = b.write(9, &[1, 2], "w").unwrap_err();
        assert_eq!(f.kind, FaultKind::OobWrite);
        assert!(f.detail.contains("first_bad=10"));
        assert!(b.read(usize::MAX, 2, "r").is_err());
    }

    #[test]
    fn reload_shrinks_live_region() {
        let mut b = GuardedBuffer::new("rx", 32);
        b.load(&[7; 20]).unwrap();
        b.load(&[7; 5]).unwrap();
        assert!(b.read_u8(5, "r").is_err());
        assert_eq!(b.read_u32(1, "r").unwrap(), 0x07070707);
    }
}
