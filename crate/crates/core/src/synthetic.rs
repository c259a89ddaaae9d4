//! Planted-cluster datasets for tests and demos.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Interaction, RawInteractions};
use crate::descriptor::ItemEntry;

/// Users and items split into `clusters` groups; every user interacts with
/// every item of its own group, at shuffled timestamps. User `u` belongs to
/// group `u % clusters`, item `i` to group `i * clusters / n_items`.
#[derive(Debug, Clone)]
pub struct PlantedClusters {
    pub n_users: usize,
    pub n_items: usize,
    pub clusters: usize,
    pub interactions: RawInteractions,
    pub items: Vec<ItemEntry>,
}

impl PlantedClusters {
    pub fn generate(n_users: usize, n_items: usize, clusters: usize, seed: u64) -> Self {
        assert!(clusters >= 1 && n_items >= clusters && n_users >= clusters);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut records = Vec::new();
        for u in 0..n_users {
            let mut own: Vec<usize> = (0..n_items).filter(|&i| Self::item_group(i, n_items, clusters) == u % clusters).collect();
            own.shuffle(&mut rng);
            let start: i64 = rng.random_range(1_500_000_000..1_600_000_000);
            for (k, i) in own.into_iter().enumerate() {
                records.push(Interaction {
                    user: format!("u{u:04}"),
                    item: format!("i{i:04}"),
                    timestamp: Some(start + 3600 * k as i64),
                });
            }
        }
        records.shuffle(&mut rng);
        let items = (0..n_items)
            .map(|i| ItemEntry {
                item_key: format!("i{i:04}"),
                text_meta: format!("group {} product {i}", Self::item_group(i, n_items, clusters)),
                image_ref: Some(format!("images/i{i:04}.jpg")),
                semantic_desc: None,
            })
            .collect();
        PlantedClusters {
            n_users,
            n_items,
            clusters,
            interactions: RawInteractions::from_records(records),
            items,
        }
    }

    pub fn item_group(item: usize, n_items: usize, clusters: usize) -> usize {
        item * clusters / n_items
    }

    /// Writes `interactions.tsv` and `items.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let mut tsv = fs::File::create(dir.join("interactions.tsv"))?;
        for r in self.interactions.records() {
            match r.timestamp {
                Some(t) => writeln!(tsv, "{}\t{}\t{t}", r.user, r.item)?,
                None => writeln!(tsv, "{}\t{}", r.user, r.item)?,
            }
        }
        let mut meta = fs::File::create(dir.join("items.jsonl"))?;
        for e in &self.items {
            writeln!(meta, "{}", serde_json::to_string(e).expect("entries serialize"))?;
        }
        Ok(())
    }
}

/// Unit vectors around `clusters` random unit centers with Gaussian jitter of
/// scale `noise`; row `i` belongs to center `labels[i]`.
pub fn clustered_embeddings(labels: &[usize], clusters: usize, dim: usize, noise: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = |v: Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let centers: Vec<Vec<f64>> = (0..clusters)
        .map(|_| unit((0..dim).map(|_| rng.sample(rand_distr::StandardNormal)).collect()))
        .collect();
    labels
        .iter()
        .map(|&c| {
            let v = centers[c]
                .iter()
                .map(|x| x + noise * rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            unit(v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::kcore_filter;

    #[test]
    fn every_user_covers_its_group() {
        let p = PlantedClusters::generate(20, 10, 2, 1);
        assert_eq!(p.interactions.len(), 20 * 5);
        assert_eq!(kcore_filter(&p.interactions, 5).unwrap().len(), 100);
        for r in p.interactions.records() {
            let u: usize = r.user[1..].parse().unwrap();
            let i: usize = r.item[1..].parse().unwrap();
            assert_eq!(u % 2, PlantedClusters::item_group(i, 10, 2));
        }
    }

    #[test]
    fn deterministic() {
        let a = PlantedClusters::generate(10, 10, 2, 9);
        let b = PlantedClusters::generate(10, 10, 2, 9);
        assert_eq!(a.interactions, b.interactions);
    }

    #[test]
    fn clustered_rows_are_unit() {
        let rows = clustered_embeddings(&[0, 1, 0], 2, 8, 0.1, 3);
        for r in rows {
            assert!((r.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
