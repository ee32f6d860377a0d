//! Planted block-structured recipe networks for tests and demos.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, HeteIn, TypeId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedConfig {
    pub users: usize,
    pub recipes: usize,
    pub ingredients: usize,
    pub blocks: usize,
    pub interactions_per_user: usize,
    /// Sampling weight multiplier for recipes in the user's own block.
    pub in_block_weight: f64,
    /// Zipf exponent of recipe popularity inside each block.
    pub zipf_exponent: f64,
    pub ingredients_per_recipe: usize,
    pub cross_block_ingredients: usize,
    pub recipe_links: usize,
    pub ingredient_links: usize,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            users: 500,
            recipes: 1000,
            ingredients: 200,
            blocks: 2,
            interactions_per_user: 20,
            in_block_weight: 10.0,
            zipf_exponent: 1.0,
            ingredients_per_recipe: 5,
            cross_block_ingredients: 1,
            recipe_links: 2,
            ingredient_links: 2,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlantedGraph {
    pub graph: HeteIn,
    /// Block of node `i` is `i % blocks` for every type.
    pub blocks: usize,
}

impl PlantedGraph {
    pub fn block(&self, index: usize) -> usize {
        index % self.blocks
    }
}

fn members(n: usize, blocks: usize, b: usize) -> Vec<usize> {
    (b..n).step_by(blocks).collect()
}

/// Distinct unordered same-type pairs inside each block.
fn block_links(rng: &mut ChaCha8Rng, n: usize, blocks: usize, per_node: usize) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for b in 0..blocks {
        let m = members(n, blocks, b);
        if m.len() < 2 {
            continue;
        }
        for &v in &m {
            for &w in m.choose_multiple(rng, per_node.min(m.len() - 1) + 1) {
                if w != v {
                    out.insert((v.min(w), v.max(w)));
                }
            }
        }
    }
    out
}

pub fn planted_graph(cfg: &PlantedConfig) -> Result<PlantedGraph> {
    if cfg.blocks == 0 || cfg.users < cfg.blocks || cfg.recipes < cfg.blocks || cfg.ingredients < cfg.blocks {
        return Err(Error::config("every type needs at least one node per block"));
    }
    if cfg.interactions_per_user > cfg.recipes {
        return Err(Error::config("more interactions per user than recipes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut b = GraphBuilder::recipe_schema();
    let (u, r, i) = (TypeId(0), TypeId(1), TypeId(2));
    b.add_nodes(u, "u", cfg.users)?;
    b.add_nodes(r, "r", cfg.recipes)?;
    b.add_nodes(i, "i", cfg.ingredients)?;
    let rel = |name: &str| b.relation_id(name).ok_or_else(|| Error::UnknownRelation(name.into()));
    let (ur, ri, rr, ii) = (rel("user-recipe")?, rel("recipe-ingredient")?, rel("recipe-recipe")?, rel("ingredient-ingredient")?);

    // Popularity decays with a recipe's position inside its block.
    let popularity: Vec<f64> = (0..cfg.recipes)
        .map(|x| ((x / cfg.blocks + 1) as f64).powf(-cfg.zipf_exponent))
        .collect();
    let all: Vec<usize> = (0..cfg.recipes).collect();
    for user in 0..cfg.users {
        let home = user % cfg.blocks;
        let weight = |&x: &usize| {
            let boost = if x % cfg.blocks == home { cfg.in_block_weight } else { 1.0 };
            popularity[x] * boost
        };
        let chosen = all
            .choose_multiple_weighted(&mut rng, cfg.interactions_per_user, weight)
            .map_err(|e| Error::config(format!("interaction weights: {e}")))?;
        let mut picks: Vec<usize> = chosen.copied().collect();
        picks.sort_unstable();
        for x in picks {
            b.add_edge(ur, user, x, None)?;
        }
    }

    let ing_blocks: Vec<Vec<usize>> = (0..cfg.blocks).map(|k| members(cfg.ingredients, cfg.blocks, k)).collect();
    for recipe in 0..cfg.recipes {
        let home = recipe % cfg.blocks;
        let mut picks: BTreeSet<usize> = ing_blocks[home]
            .choose_multiple(&mut rng, cfg.ingredients_per_recipe)
            .copied()
            .collect();
        if cfg.blocks > 1 {
            for _ in 0..cfg.cross_block_ingredients {
                let other = (home + rng.gen_range(1..cfg.blocks)) % cfg.blocks;
                if let Some(&x) = ing_blocks[other].choose(&mut rng) {
                    picks.insert(x);
                }
            }
        }
        for x in picks {
            b.add_edge(ri, recipe, x, None)?;
        }
    }
    for (a, c) in block_links(&mut rng, cfg.recipes, cfg.blocks, cfg.recipe_links) {
        b.add_edge(rr, a, c, None)?;
    }
    for (a, c) in block_links(&mut rng, cfg.ingredients, cfg.blocks, cfg.ingredient_links) {
        b.add_edge(ii, a, c, None)?;
    }
    Ok(PlantedGraph {
        graph: b.build()?,
        blocks: cfg.blocks,
    })
}
