//! Square binary code families.
//!
//! A code is a `grid_n × grid_n` bit grid stored row-major with the top-left
//! cell in the most significant used bit. Bit value 1 is a bright cell.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DictionaryError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate code id {0}")]
    DuplicateId(u32),
    #[error("codes {a} and {b} are only {dist} bits apart under rotation (need {need})")]
    TooClose { a: u32, b: u32, dist: u32, need: u32 },
    #[error("grid size {0} unsupported (1..=8)")]
    GridSize(usize),
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TagDictionary {
    pub grid_n: usize,
    pub codes: Vec<(u32, u64)>,
    pub max_hamming: u32,
}

pub const DEFAULT_NAME: &str = "default16";

/// Rotates a code grid a quarter turn clockwise (rows pointing down).
pub fn rotate90(bits: u64, n: usize) -> u64 {
    let mut out = 0u64;
    for r in 0..n {
        for c in 0..n {
            // new[r][c] = old[n-1-c][r]
            if get_bit(bits, n, n - 1 - c, r) {
                out |= 1 << bit_index(n, r, c);
            }
        }
    }
    out
}

fn bit_index(n: usize, r: usize, c: usize) -> usize {
    n * n - 1 - (r * n + c)
}

pub fn get_bit(bits: u64, n: usize, r: usize, c: usize) -> bool {
    (bits >> bit_index(n, r, c)) & 1 == 1
}

pub fn bits_from_grid(grid: &[bool], n: usize) -> u64 {
    let mut out = 0u64;
    for r in 0..n {
        for c in 0..n {
            if grid[r * n + c] {
                out |= 1 << bit_index(n, r, c);
            }
        }
    }
    out
}

pub fn hamming(a: u64, b: u64) -> u32 {
    (a ^ b).count_ones()
}

fn rotations(bits: u64, n: usize) -> [u64; 4] {
    let r1 = rotate90(bits, n);
    let r2 = rotate90(r1, n);
    [bits, r1, r2, rotate90(r2, n)]
}

/// Smallest distance between `a` and any rotation of `b`.
pub fn rotational_distance(a: u64, b: u64, n: usize) -> u32 {
    rotations(b, n).iter().map(|&r| hamming(a, r)).min().unwrap()
}

/// Smallest distance between a code and its own non-trivial rotations.
/// Corner ordering needs this to be large, otherwise orientation is ambiguous.
pub fn self_rotational_distance(a: u64, n: usize) -> u32 {
    rotations(a, n)[1..].iter().map(|&r| hamming(a, r)).min().unwrap()
}

impl TagDictionary {
    /// Greedy scan of 16-bit integers in ascending order, keeping the first
    /// sixteen codes whose rotational distance to every accepted code (and to
    /// their own rotations) is at least four.
    pub fn default16() -> Self {
        Self::greedy(4, 16, 4, 1)
    }

    pub fn greedy(grid_n: usize, count: usize, min_distance: u32, max_hamming: u32) -> Self {
        let total = 1u64 << (grid_n * grid_n);
        let mut codes: Vec<(u32, u64)> = Vec::with_capacity(count);
        for candidate in 0..total {
            if codes.len() == count {
                break;
            }
            if self_rotational_distance(candidate, grid_n) < min_distance {
                continue;
            }
            if codes
                .iter()
                .all(|&(_, c)| rotational_distance(candidate, c, grid_n) >= min_distance)
            {
                codes.push((codes.len() as u32, candidate));
            }
        }
        TagDictionary {
            grid_n,
            codes,
            max_hamming,
        }
    }

    pub fn code(&self, id: u32) -> Option<u64> {
        self.codes.iter().find(|(i, _)| *i == id).map(|&(_, c)| c)
    }

    pub fn validate(&self) -> Result<(), DictionaryError> {
        if self.grid_n == 0 || self.grid_n > 8 {
            return Err(DictionaryError::GridSize(self.grid_n));
        }
        let need = 2 * self.max_hamming + 2;
        for (k, &(a_id, a)) in self.codes.iter().enumerate() {
            let own = self_rotational_distance(a, self.grid_n);
            if own < need {
                return Err(DictionaryError::TooClose {
                    a: a_id,
                    b: a_id,
                    dist: own,
                    need,
                });
            }
            for &(b_id, b) in &self.codes[k + 1..] {
                if a_id == b_id {
                    return Err(DictionaryError::DuplicateId(a_id));
                }
                let dist = rotational_distance(a, b, self.grid_n);
                if dist < need {
                    return Err(DictionaryError::TooClose {
                        a: a_id,
                        b: b_id,
                        dist,
                        need,
                    });
                }
            }
        }
        Ok(())
    }

    /// Closest code to `bits` without rotating, as `(id, distance)`.
    pub fn nearest(&self, bits: u64) -> Option<(u32, u32)> {
        self.codes
            .iter()
            .map(|&(id, c)| (id, hamming(bits, c)))
            .min_by_key(|&(id, d)| (d, id))
    }

    /// One `id hex_bits` line per code.
    pub fn to_text(&self) -> String {
        let digits = (self.grid_n * self.grid_n).div_ceil(4);
        let mut out = String::new();
        for &(id, c) in &self.codes {
            let _ = writeln!(out, "{id} {c:0digits$x}");
        }
        out
    }

    /// Parses `id hex_bits` lines. `#` starts a comment; an optional
    /// `grid_n N` / `max_hamming K` line overrides the defaults (4 and 1).
    /// The built-in family for [`DEFAULT_NAME`], otherwise a dictionary file.
    pub fn load(name_or_path: &str) -> Result<Self, DictionaryError> {
        if name_or_path == DEFAULT_NAME {
            return Ok(Self::default16());
        }
        let text = std::fs::read_to_string(name_or_path).map_err(|e| DictionaryError::Io {
            path: name_or_path.to_string(),
            msg: e.to_string(),
        })?;
        let dict = Self::from_text(&text)?;
        dict.validate()?;
        Ok(dict)
    }

    pub fn from_text(text: &str) -> Result<Self, DictionaryError> {
        let mut grid_n = 4usize;
        let mut max_hamming = 1u32;
        let mut codes = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| DictionaryError::Parse { line: line_no, msg };
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 2 {
                return Err(err(format!("expected 2 fields, got {}", toks.len())));
            }
            match toks[0] {
                "grid_n" => {
                    grid_n = toks[1].parse().map_err(|_| err("bad grid_n".into()))?;
                    continue;
                }
                "max_hamming" => {
                    max_hamming = toks[1].parse().map_err(|_| err("bad max_hamming".into()))?;
                    continue;
                }
                _ => {}
            }
            let id: u32 = toks[0].parse().map_err(|_| err(format!("bad id {:?}", toks[0])))?;
            let hex = toks[1].trim_start_matches("0x");
            let bits =
                u64::from_str_radix(hex, 16).map_err(|_| err(format!("bad hex {:?}", toks[1])))?;
            codes.push((id, bits));
        }
        if grid_n == 0 || grid_n > 8 {
            return Err(DictionaryError::GridSize(grid_n));
        }
        let mask = if grid_n == 8 { u64::MAX } else { (1u64 << (grid_n * grid_n)) - 1 };
        if let Some(&(id, _)) = codes.iter().find(|(_, c)| c & !mask != 0) {
            return Err(DictionaryError::Parse {
                line: 0,
                msg: format!("code {id} has bits outside the {grid_n}x{grid_n} grid"),
            });
        }
        let dict = TagDictionary {
            grid_n,
            codes,
            max_hamming,
        };
        dict.validate()?;
        Ok(dict)
    }
}
