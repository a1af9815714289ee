//! Length-preserving AFL-style mutators.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

/// Byte-width interesting values, written as their unsigned byte.
pub const INTERESTING_8: [i8; 9] = [-128, -1, 0, 1, 16, 32, 64, 100, 127];
pub const ARITH_MAX: u32 = 35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MutatorId {
    BitFlip1,
    ByteFlip,
    ArithPlus,
    ArithMinus,
    InterestingReplace,
    DictionaryReplace,
    RandomByte,
}

impl MutatorId {
    pub const ALL: [MutatorId; 7] = [
        MutatorId::BitFlip1,
        MutatorId::ByteFlip,
        MutatorId::ArithPlus,
        MutatorId::ArithMinus,
        MutatorId::InterestingReplace,
        MutatorId::DictionaryReplace,
        MutatorId::RandomByte,
    ];
    pub const COUNT: usize = Self::ALL.len();

    /// Stable integer code, used in logs and as the embedding index.
    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MutatorId::BitFlip1 => "bitflip",
            MutatorId::ByteFlip => "byteflip",
            MutatorId::ArithPlus => "arth+",
            MutatorId::ArithMinus => "arth-",
            MutatorId::InterestingReplace => "interesting",
            MutatorId::DictionaryReplace => "dictionary",
            MutatorId::RandomByte => "random",
        }
    }

    /// Inclusive-exclusive parameter range, given the dictionary size.
    pub fn param_range(self, dict_len: usize) -> std::ops::Range<u32> {
        match self {
            MutatorId::BitFlip1 => 0..8,
            MutatorId::ByteFlip => 0..1,
            MutatorId::ArithPlus | MutatorId::ArithMinus => 1..ARITH_MAX + 1,
            MutatorId::InterestingReplace => 0..INTERESTING_8.len() as u32,
            MutatorId::DictionaryReplace => 0..dict_len as u32,
            MutatorId::RandomByte => 0..256,
        }
    }

    /// Parameter scaled into `[0, 1]` for the model's side input.
    pub fn param_norm(self, param: u32, dict_len: usize) -> f64 {
        let p = param as f64;
        match self {
            MutatorId::BitFlip1 => p / 7.0,
            MutatorId::ByteFlip => 0.0,
            MutatorId::ArithPlus | MutatorId::ArithMinus => p / ARITH_MAX as f64,
            MutatorId::InterestingReplace => p / (INTERESTING_8.len() - 1) as f64,
            MutatorId::DictionaryReplace if dict_len > 1 => p / (dict_len - 1) as f64,
            MutatorId::DictionaryReplace => 0.0,
            MutatorId::RandomByte => p / 255.0,
        }
    }
}

impl fmt::Display for MutatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MutatorId {
    type Err = MutationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| MutationError::UnknownMutator(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mutation {
    pub mutator: MutatorId,
    pub position: usize,
    pub param: u32,
}

impl Mutation {
    pub fn new(mutator: MutatorId, position: usize, param: u32) -> Self {
        Self { mutator, position, param }
    }

    /// Number of bytes the mutation may touch, starting at `position`.
    pub fn footprint(&self, dict: &TokenDictionary) -> usize {
        match self.mutator {
            MutatorId::DictionaryReplace => dict.get(self.param as usize).map_or(0, <[u8]>::len),
            _ => 1,
        }
    }
}

impl fmt::Display for Mutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}:{}", self.mutator, self.position, self.param)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MutationError {
    #[error("position {position} out of range for input of length {len}")]
    Position { position: usize, len: usize },
    #[error("parameter {param} out of range for {mutator}")]
    Param { mutator: MutatorId, param: u32 },
    #[error("token {index} ({token_len} bytes) at position {position} overflows input of length {len}")]
    TokenOverflow { index: usize, token_len: usize, position: usize, len: usize },
    #[error("unknown mutator {0:?}")]
    UnknownMutator(String),
    #[error("dictionary line {line}: {msg}")]
    DictSyntax { line: usize, msg: String },
    #[error("dictionary I/O: {0}")]
    DictIo(String),
}

/// Ordered list of non-empty byte-string tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenDictionary {
    tokens: Vec<Vec<u8>>,
}

impl TokenDictionary {
    pub fn new(tokens: Vec<Vec<u8>>) -> Result<Self, MutationError> {
        if let Some(i) = tokens.iter().position(Vec::is_empty) {
            return Err(MutationError::DictSyntax { line: i + 1, msg: "empty token".into() });
        }
        Ok(Self { tokens })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&[u8]> {
        self.tokens.get(i).map(Vec::as_slice)
    }

    pub fn tokens(&self) -> &[Vec<u8>] {
        &self.tokens
    }

    /// One token per line; `\xNN` and `\\` escapes; blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self, MutationError> {
        let mut tokens = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: &str| MutationError::DictSyntax { line: i + 1, msg: msg.into() };
            let mut tok = Vec::new();
            let bytes = line.as_bytes();
            let mut j = 0;
            while j < bytes.len() {
                match bytes[j] {
                    b'\\' if bytes.get(j + 1) == Some(&b'\\') => {
                        tok.push(b'\\');
                        j += 2;
                    }
                    b'\\' if bytes.get(j + 1) == Some(&b'x') => {
                        let hex = line.get(j + 2..j + 4).ok_or_else(|| err("truncated \\x escape"))?;
                        tok.push(u8::from_str_radix(hex, 16).map_err(|_| err("bad \\x escape"))?);
                        j += 4;
                    }
                    b'\\' => return Err(err("unknown escape")),
                    b => {
                        tok.push(b);
                        j += 1;
                    }
                }
            }
            tokens.push(tok);
        }
        Ok(Self { tokens })
    }

    pub fn load(path: &Path) -> Result<Self, MutationError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| MutationError::DictIo(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for tok in &self.tokens {
            for (k, &b) in tok.iter().enumerate() {
                let printable = b.is_ascii_graphic() || (b == b' ' && k > 0);
                match b {
                    b'\\' => out.push_str("\\\\"),
                    b'#' if k == 0 => out.push_str("\\x23"),
                    _ if printable => out.push(b as char),
                    _ => out.push_str(&format!("\\x{b:02x}")),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Applies `m` in place. On error `buf` is left untouched.
pub fn apply_in_place(buf: &mut [u8], m: &Mutation, dict: &TokenDictionary) -> Result<(), MutationError> {
    let len = buf.len();
    if m.position >= len {
        return Err(MutationError::Position { position: m.position, len });
    }
    if !m.mutator.param_range(dict.len()).contains(&m.param) {
        return Err(MutationError::Param { mutator: m.mutator, param: m.param });
    }
    let b = &mut buf[m.position];
    match m.mutator {
        MutatorId::BitFlip1 => *b ^= 1 << m.param,
        MutatorId::ByteFlip => *b ^= 0xff,
        MutatorId::ArithPlus => *b = b.wrapping_add(m.param as u8),
        MutatorId::ArithMinus => *b = b.wrapping_sub(m.param as u8),
        MutatorId::InterestingReplace => *b = INTERESTING_8[m.param as usize] as u8,
        MutatorId::RandomByte => *b = m.param as u8,
        MutatorId::DictionaryReplace => {
            let tok = &dict.tokens[m.param as usize];
            if m.position + tok.len() > len {
                return Err(MutationError::TokenOverflow {
                    index: m.param as usize,
                    token_len: tok.len(),
                    position: m.position,
                    len,
                });
            }
            buf[m.position..m.position + tok.len()].copy_from_slice(tok);
        }
    }
    Ok(())
}

pub fn apply_mutation(seed: &[u8], m: &Mutation, dict: &TokenDictionary) -> Result<Vec<u8>, MutationError> {
    let mut out = seed.to_vec();
    apply_in_place(&mut out, m, dict)?;
    Ok(out)
}

/// Lazily enumerates every mutation of a seed: mutator-major, then
/// position, then parameter.
#[derive(Debug, Clone)]
pub struct DeterministicSchedule<'d> {
    len: usize,
    dict: &'d TokenDictionary,
    mutator: usize,
    position: usize,
    param: u32,
}

impl Iterator for DeterministicSchedule<'_> {
    type Item = Mutation;

    fn next(&mut self) -> Option<Mutation> {
        while self.mutator < MutatorId::COUNT {
            let mutator = MutatorId::ALL[self.mutator];
            let range = mutator.param_range(self.dict.len());
            if self.position >= self.len {
                self.mutator += 1;
                self.position = 0;
                self.param = MutatorId::ALL.get(self.mutator).map_or(0, |m| m.param_range(self.dict.len()).start);
                continue;
            }
            if self.param >= range.end {
                self.position += 1;
                self.param = range.start;
                continue;
            }
            let m = Mutation::new(mutator, self.position, self.param);
            self.param += 1;
            if mutator == MutatorId::DictionaryReplace && m.position + m.footprint(self.dict) > self.len {
                continue;
            }
            return Some(m);
        }
        None
    }
}

pub fn deterministic_schedule<'d>(seed: &[u8], dict: &'d TokenDictionary) -> DeterministicSchedule<'d> {
    DeterministicSchedule { len: seed.len(), dict, mutator: 0, position: 0, param: 0 }
}

/// Closed-form length of [`deterministic_schedule`].
pub fn schedule_len(len: usize, dict: &TokenDictionary) -> usize {
    let fixed: usize =
        MutatorId::ALL.iter().filter(|&&m| m != MutatorId::DictionaryReplace).map(|m| m.param_range(0).len()).sum();
    let tokens: usize = dict.tokens.iter().map(|t| (len + 1).saturating_sub(t.len())).sum();
    fixed * len + tokens
}

/// Draws one valid single-site mutation for an input of length `len`.
pub fn random_mutation<R: Rng + ?Sized>(len: usize, dict: &TokenDictionary, rng: &mut R) -> Mutation {
    debug_assert!(len >= 1);
    loop {
        let mutator = MutatorId::ALL[rng.gen_range(0..MutatorId::COUNT)];
        let position = rng.gen_range(0..len);
        let range = mutator.param_range(dict.len());
        if range.is_empty() {
            continue;
        }
        let m = Mutation::new(mutator, position, rng.gen_range(range));
        if mutator == MutatorId::DictionaryReplace && position + m.footprint(dict) > len {
            continue;
        }
        return m;
    }
}

/// Stacks 1 to 8 random mutations on a copy of `seed`.
pub fn havoc_step<R: Rng + ?Sized>(seed: &[u8], rng: &mut R, dict: &TokenDictionary) -> (Vec<u8>, Vec<Mutation>) {
    havoc_step_filtered(seed, rng, dict, |_, _| true)
}

/// Like [`havoc_step`], but each drawn mutation must pass `accept`; rejected
/// draws are retried a bounded number of times and then dropped, so the
/// stack may come out shorter than drawn (even empty).
pub fn havoc_step_filtered<R, F>(
    seed: &[u8],
    rng: &mut R,
    dict: &TokenDictionary,
    mut accept: F,
) -> (Vec<u8>, Vec<Mutation>)
where
    R: Rng + ?Sized,
    F: FnMut(&Mutation, &mut R) -> bool,
{
    const RETRIES: usize = 64;
    let mut out = seed.to_vec();
    if seed.is_empty() {
        return (out, Vec::new());
    }
    let stack = rng.gen_range(1..=8);
    let mut applied = Vec::with_capacity(stack);
    for _ in 0..stack {
        for _ in 0..RETRIES {
            let m = random_mutation(out.len(), dict, rng);
            if accept(&m, rng) {
                apply_in_place(&mut out, &m, dict).expect("random_mutation yields valid mutations");
                applied.push(m);
                break;
            }
        }
    }
    (out, applied)
}
