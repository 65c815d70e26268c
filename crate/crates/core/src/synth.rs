//! Seeded stochastic GUI generator.
//!
//! Generation draws, each uniformly over its allowed set: the header button
//! count, each header button kind, the row count, each row's column kind,
//! and each cell's leaf kind. Every decision is independent, so the number of
//! distinct outputs is a closed-form product.

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dsl::{Element, GuiAst, Node};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SynthError {
    #[error("invalid synthesis parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthParams {
    /// Rows are drawn from `1..=max_rows`.
    pub max_rows: usize,
    pub column_kinds: Vec<Element>,
    /// Inclusive bounds on header buttons; a count of zero omits the header.
    pub header_buttons: (usize, usize),
    pub header_palette: Vec<Element>,
    pub leaf_palette: Vec<Element>,
    pub seed: u64,
}

impl SynthParams {
    /// Small decision space used for the 64×64 experiments.
    pub fn desk(seed: u64) -> Self {
        Self {
            max_rows: 3,
            column_kinds: Element::COLUMNS.to_vec(),
            header_buttons: (1, 4),
            header_palette: vec![Element::BtnActive, Element::BtnInactive],
            leaf_palette: vec![
                Element::BtnGreen,
                Element::BtnOrange,
                Element::BtnRed,
                Element::Text,
                Element::SmallTitle,
            ],
            seed,
        }
    }

    /// Every element kind enabled.
    pub fn full(seed: u64) -> Self {
        Self {
            max_rows: 5,
            column_kinds: Element::COLUMNS.to_vec(),
            header_buttons: (0, 5),
            header_palette: vec![Element::BtnActive, Element::BtnInactive],
            leaf_palette: Element::LEAVES.to_vec(),
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidParams(m.to_string()));
        if self.max_rows == 0 {
            return bad("max_rows must be at least 1");
        }
        if self.column_kinds.is_empty() || !self.column_kinds.iter().all(|e| e.is_column()) {
            return bad("column kinds must be a non-empty subset of single/double/quadruple");
        }
        if self.header_buttons.0 > self.header_buttons.1 {
            return bad("header button range is empty");
        }
        if self.header_buttons.1 > 0
            && (self.header_palette.is_empty()
                || !self
                    .header_palette
                    .iter()
                    .all(|&e| Element::Header.admits(e)))
        {
            return bad("header palette must be a non-empty subset of btn-active/btn-inactive");
        }
        if self.leaf_palette.is_empty() || !self.leaf_palette.iter().all(|e| e.is_leaf()) {
            return bad("leaf palette must be a non-empty set of leaf kinds");
        }
        Ok(())
    }
}

fn pick<R: Rng>(rng: &mut R, set: &[Element]) -> Element {
    set[rng.gen_range(0..set.len())]
}

/// Draws one GUI. Deterministic in `params` (including its seed).
pub fn synthesize_ast(params: &SynthParams) -> Result<GuiAst, SynthError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut children = Vec::new();

    let (lo, hi) = params.header_buttons;
    let buttons = rng.gen_range(lo..=hi);
    if buttons > 0 {
        let kids = (0..buttons)
            .map(|_| Node::leaf(pick(&mut rng, &params.header_palette)))
            .collect();
        children.push(Node::container(Element::Header, kids));
    }

    let rows = rng.gen_range(1..=params.max_rows);
    for _ in 0..rows {
        let column = pick(&mut rng, &params.column_kinds);
        let cells = (0..column.column_count().unwrap_or(1))
            .map(|_| {
                Node::container(
                    column,
                    vec![Node::leaf(pick(&mut rng, &params.leaf_palette))],
                )
            })
            .collect();
        children.push(Node::container(Element::Row, cells));
    }
    Ok(GuiAst::new(children))
}

/// Exact number of distinct trees `synthesize_ast` can emit.
pub fn count_synthesizable(params: &SynthParams) -> Result<BigUint, SynthError> {
    params.validate()?;
    let pow = |base: usize, exp: usize| BigUint::from(base).pow(exp as u32);

    let (lo, hi) = params.header_buttons;
    let headers: BigUint = (lo..=hi).map(|b| pow(params.header_palette.len(), b)).sum();

    let leaves = params.leaf_palette.len();
    let per_row: BigUint = params
        .column_kinds
        .iter()
        .map(|c| pow(leaves, c.column_count().unwrap_or(1)))
        .sum();
    let mut layouts = BigUint::zero();
    let mut power = BigUint::one();
    for _ in 0..params.max_rows {
        power *= &per_row;
        layouts += &power;
    }
    Ok(headers * layouts)
}

/// Per-file seed for item `index` of a dataset generated with `seed`.
pub fn item_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
