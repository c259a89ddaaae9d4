use rand::Rng;

use crate::corpus::InteractionMatrix;

/// `(user, positive item, negative item)` triplets drawn against the
/// training matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletBatch {
    triplets: Vec<(usize, usize, usize)>,
}

impl TripletBatch {
    pub fn new(triplets: Vec<(usize, usize, usize)>) -> Self {
        TripletBatch { triplets }
    }

    pub fn triplets(&self) -> &[(usize, usize, usize)] {
        &self.triplets
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }
}

/// Uniform sampler over observed training pairs with rejection-sampled
/// negatives. Users who interacted with every item cannot yield a negative
/// and are left out of the pair pool.
pub struct TripletSampler<'a> {
    train: &'a InteractionMatrix,
    pairs: Vec<(usize, usize)>,
}

impl<'a> TripletSampler<'a> {
    pub fn new(train: &'a InteractionMatrix) -> Self {
        let n_items = train.n_items();
        let pairs = (0..train.n_users())
            .filter(|&u| train.items_of(u).len() < n_items)
            .flat_map(|u| train.items_of(u).iter().map(move |&i| (u, i)))
            .collect();
        TripletSampler { train, pairs }
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn sample<R: Rng>(&self, size: usize, rng: &mut R) -> TripletBatch {
        assert!(!self.pairs.is_empty(), "no sampleable training pairs");
        let n_items = self.train.n_items();
        let triplets = (0..size)
            .map(|_| {
                let (u, pos) = self.pairs[rng.random_range(0..self.pairs.len())];
                let neg = loop {
                    let j = rng.random_range(0..n_items);
                    if !self.train.contains(u, j) {
                        break j;
                    }
                };
                (u, pos, neg)
            })
            .collect();
        TripletBatch { triplets }
    }
}

pub fn sample_triplets<R: Rng>(train: &InteractionMatrix, batch_size: usize, rng: &mut R) -> TripletBatch {
    TripletSampler::new(train).sample(batch_size, rng)
}
