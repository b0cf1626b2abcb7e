//! Token vocabulary, fixed-size token grids and (de)tokenization.
//!
//! Every primitive occupies one slot of eight tokens laid out as
//! `[type, params..., construction, padding...]`:
//!
//! | kind   | layout                                   |
//! |--------|------------------------------------------|
//! | arc    | `3 xs ys xm ym xe ye c`                  |
//! | circle | `4 xc yc r c 0 0 0`                      |
//! | line   | `5 xs ys xe ye c 0 0`                    |
//! | point  | `6 xp yp c 0 0 0 0`                      |
//!
//! A parameter token is `7 + bin`. The construction token is 71 for
//! construction geometry and 72 otherwise. An empty slot is all padding.

use super::{quantize, Primitive, PrimitiveKind, Sketch, SketchError, MAX_PRIMITIVES};

pub const PAD: u8 = 0;
pub const START: u8 = 1;
pub const END: u8 = 2;
pub const ARC: u8 = 3;
pub const CIRCLE: u8 = 4;
pub const LINE: u8 = 5;
pub const POINT: u8 = 6;
pub const PARAM_MIN: u8 = 7;
pub const PARAM_MAX: u8 = 70;
pub const CONSTRUCTION: u8 = 71;
pub const NON_CONSTRUCTION: u8 = 72;
/// Vocabulary size.
pub const VOCAB: usize = 73;
/// Tokens per primitive slot.
pub const SLOT_LEN: usize = 8;
/// Token positions in a full grid.
pub const GRID_TOKENS: usize = SLOT_LEN * MAX_PRIMITIVES;
/// Length of the framed token stream (start slot, 16 slots, end slot).
pub const STREAM_LEN: usize = SLOT_LEN * (MAX_PRIMITIVES + 2);

/// Human-readable meaning of a token value.
pub fn describe_token(t: u8) -> &'static str {
    match t {
        PAD => "padding",
        START => "start",
        END => "end",
        ARC => "arc",
        CIRCLE => "circle",
        LINE => "line",
        POINT => "point",
        PARAM_MIN..=PARAM_MAX => "parameter",
        CONSTRUCTION => "construction",
        NON_CONSTRUCTION => "non-construction",
        _ => "out of vocabulary",
    }
}

pub fn type_token(kind: PrimitiveKind) -> u8 {
    match kind {
        PrimitiveKind::Arc => ARC,
        PrimitiveKind::Circle => CIRCLE,
        PrimitiveKind::Line => LINE,
        PrimitiveKind::Point => POINT,
    }
}

pub fn kind_of_token(t: u8) -> Option<PrimitiveKind> {
    match t {
        ARC => Some(PrimitiveKind::Arc),
        CIRCLE => Some(PrimitiveKind::Circle),
        LINE => Some(PrimitiveKind::Line),
        POINT => Some(PrimitiveKind::Point),
        _ => None,
    }
}

pub type Slot = [u8; SLOT_LEN];

/// Sixteen primitive slots of eight tokens each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TokenGrid {
    pub slots: [Slot; MAX_PRIMITIVES],
}

impl Default for TokenGrid {
    fn default() -> Self {
        Self { slots: [[PAD; SLOT_LEN]; MAX_PRIMITIVES] }
    }
}

impl TokenGrid {
    /// Builds a grid from a flat row-major list of 128 tokens.
    pub fn from_flat(tokens: &[u8]) -> Option<Self> {
        if tokens.len() != GRID_TOKENS {
            return None;
        }
        let mut grid = Self::default();
        for (slot, chunk) in grid.slots.iter_mut().zip(tokens.chunks_exact(SLOT_LEN)) {
            slot.copy_from_slice(chunk);
        }
        Some(grid)
    }

    pub fn flat(&self) -> Vec<u8> {
        self.slots.iter().flatten().copied().collect()
    }

    /// Framed stream: a start slot, the sixteen slots, then an end slot.
    pub fn to_stream(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(STREAM_LEN);
        out.push(START);
        out.extend([PAD; SLOT_LEN - 1]);
        out.extend(self.flat());
        out.push(END);
        out.extend([PAD; SLOT_LEN - 1]);
        out
    }

    pub fn from_stream(stream: &[u8]) -> Result<Self, SketchError> {
        let framed = stream.len() == STREAM_LEN
            && stream[0] == START
            && stream[STREAM_LEN - SLOT_LEN] == END
            && stream[1..SLOT_LEN].iter().all(|&t| t == PAD)
            && stream[STREAM_LEN - SLOT_LEN + 1..].iter().all(|&t| t == PAD);
        if !framed {
            return Err(SketchError::BadStream(stream.len()));
        }
        Ok(Self::from_flat(&stream[SLOT_LEN..STREAM_LEN - SLOT_LEN]).expect("length checked"))
    }

    /// Applies a slot permutation: slot `i` of the result is slot `perm[i]` of `self`.
    pub fn permute_slots(&self, perm: &[usize]) -> Self {
        let mut out = Self::default();
        for (i, &j) in perm.iter().enumerate() {
            out.slots[i] = self.slots[j];
        }
        out
    }

    pub fn is_empty_slot(&self, i: usize) -> bool {
        self.slots[i].iter().all(|&t| t == PAD)
    }
}

/// Why a slot was dropped by [`detokenize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvalidSlot {
    /// First token is not a primitive type (and the slot is not empty).
    BadType(u8),
    /// Token outside the 73-symbol vocabulary.
    OutOfVocabulary { pos: usize, token: u8 },
    /// A parameter position holds something other than a parameter token.
    BadParameter { pos: usize, token: u8 },
    /// The construction position holds neither 71 nor 72.
    MissingConstruction { token: u8 },
    /// A trailing position is not padding.
    NonZeroPadding { pos: usize },
    /// Coincident points or a zero radius.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotStatus {
    Primitive,
    Empty,
    Invalid(InvalidSlot),
}

/// Syntax and degeneracy check of a single slot.
pub fn check_slot(slot: &Slot) -> SlotStatus {
    use InvalidSlot::*;
    if let Some(pos) = slot.iter().position(|&t| usize::from(t) >= VOCAB) {
        return SlotStatus::Invalid(OutOfVocabulary { pos, token: slot[pos] });
    }
    if slot.iter().all(|&t| t == PAD) {
        return SlotStatus::Empty;
    }
    let Some(kind) = kind_of_token(slot[0]) else {
        return SlotStatus::Invalid(BadType(slot[0]));
    };
    let n = kind.param_count();
    for pos in 1..=n {
        if !(PARAM_MIN..=PARAM_MAX).contains(&slot[pos]) {
            return SlotStatus::Invalid(BadParameter { pos, token: slot[pos] });
        }
    }
    let c = slot[n + 1];
    if c != CONSTRUCTION && c != NON_CONSTRUCTION {
        return SlotStatus::Invalid(MissingConstruction { token: c });
    }
    if let Some(off) = slot[n + 2..].iter().position(|&t| t != PAD) {
        return SlotStatus::Invalid(NonZeroPadding { pos: n + 2 + off });
    }
    let p = &slot[1..=n];
    let degenerate = match kind {
        PrimitiveKind::Line => p[0..2] == p[2..4],
        PrimitiveKind::Arc => p[0..2] == p[2..4] || p[0..2] == p[4..6] || p[2..4] == p[4..6],
        PrimitiveKind::Circle => p[2] == PARAM_MIN,
        PrimitiveKind::Point => false,
    };
    if degenerate {
        SlotStatus::Invalid(Degenerate)
    } else {
        SlotStatus::Primitive
    }
}

/// Encodes one primitive into a slot without validity checks.
pub fn encode_primitive(p: &Primitive) -> Slot {
    let mut slot = [PAD; SLOT_LEN];
    slot[0] = type_token(p.kind());
    let params = p.params();
    for (i, v) in params.iter().enumerate() {
        slot[1 + i] = PARAM_MIN + quantize(*v);
    }
    slot[1 + params.len()] = if p.is_construction { CONSTRUCTION } else { NON_CONSTRUCTION };
    slot
}

/// Tokenizes a sketch; slot `i` holds primitive `i` and the rest are padding.
pub fn tokenize(sketch: &Sketch) -> Result<TokenGrid, SketchError> {
    if sketch.len() > MAX_PRIMITIVES {
        return Err(SketchError::TooManyPrimitives(sketch.len()));
    }
    let mut grid = TokenGrid::default();
    for (index, p) in sketch.iter().enumerate() {
        let slot = encode_primitive(p);
        if check_slot(&slot) != SlotStatus::Primitive {
            return Err(SketchError::Degenerate { index });
        }
        grid.slots[index] = slot;
    }
    Ok(grid)
}

/// Decodes a valid slot. Callers check the slot first.
fn decode_slot(slot: &Slot) -> Primitive {
    let kind = kind_of_token(slot[0]).expect("checked slot");
    let n = kind.param_count();
    let params: Vec<f64> = slot[1..=n]
        .iter()
        .map(|&t| f64::from(t - PARAM_MIN) * super::BIN_WIDTH)
        .collect();
    Primitive::from_params(kind, &params, slot[n + 1] == CONSTRUCTION).expect("param count matches kind")
}

/// Result of [`detokenize`]: surviving primitives in slot order and one status per slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Detokenized {
    pub sketch: Sketch,
    pub report: [SlotStatus; MAX_PRIMITIVES],
}

impl Detokenized {
    pub fn dropped(&self) -> usize {
        self.report.iter().filter(|s| matches!(s, SlotStatus::Invalid(_))).count()
    }
}

/// Decodes every syntactically valid slot; invalid slots are dropped and reported.
pub fn detokenize(grid: &TokenGrid) -> Detokenized {
    let mut report = [SlotStatus::Empty; MAX_PRIMITIVES];
    let mut prims = Vec::new();
    for (i, slot) in grid.slots.iter().enumerate() {
        report[i] = check_slot(slot);
        if report[i] == SlotStatus::Primitive {
            prims.push(decode_slot(slot));
        }
    }
    Detokenized { sketch: Sketch::new(prims).expect("at most 16 slots"), report }
}
