//! Row-major run-length bitmasks. Counts alternate background/foreground and
//! always start with a (possibly zero) background run.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rle {
    pub width: u32,
    pub height: u32,
    pub counts: Vec<u32>,
}

impl Rle {
    pub fn encode(bits: &[bool], width: u32, height: u32) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(Error::DimensionMismatch(format!(
                "{} mask bits for {width}×{height}",
                bits.len()
            )));
        }
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for &b in bits {
            if b != current {
                counts.push(run);
                run = 0;
                current = b;
            }
            run += 1;
        }
        counts.push(run);
        Ok(Self { width, height, counts })
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            counts: vec![width * height],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let total: u64 = self.counts.iter().map(|&c| c as u64).sum();
        if total != self.width as u64 * self.height as u64 {
            return Err(Error::Protocol(format!(
                "RLE counts sum to {total}, expected {}",
                self.width as u64 * self.height as u64
            )));
        }
        Ok(())
    }

    pub fn decode(&self) -> Result<Vec<bool>> {
        self.validate()?;
        let mut bits = Vec::with_capacity(self.width as usize * self.height as usize);
        for (i, &c) in self.counts.iter().enumerate() {
            bits.extend(std::iter::repeat_n(i % 2 == 1, c as usize));
        }
        Ok(bits)
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }
}
