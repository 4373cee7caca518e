use crate::error::{Error, Result};

use super::BackboneConfig;

/// One scored example: a candidate item for a user given the user's
/// preceding behaviour.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Device that owns the sample; devices are users.
    pub device: usize,
    pub item: usize,
    pub category: usize,
    /// Most recent last.
    pub history_items: Vec<usize>,
    pub history_categories: Vec<usize>,
    pub label: f64,
}

/// Column-oriented mini-batch with histories padded to a common width.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub users: Vec<usize>,
    pub items: Vec<usize>,
    pub categories: Vec<usize>,
    /// `len() * width` entries, row-major; padding uses index 0.
    pub hist_items: Vec<usize>,
    pub hist_categories: Vec<usize>,
    pub hist_len: Vec<usize>,
    pub width: usize,
    pub labels: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn from_samples(samples: &[Sample], max_history: usize) -> Batch {
        let mut b = BatchBuilder::new(max_history);
        for s in samples {
            b.push(
                s.device,
                s.item,
                s.category,
                &s.history_items,
                &s.history_categories,
                s.label,
            );
        }
        b.build()
    }

    /// Rejects ids outside the model's vocabularies.
    pub fn validate(&self, config: &BackboneConfig) -> Result<()> {
        let check = |what: &str, ids: &[usize], size: usize| -> Result<()> {
            match ids.iter().find(|&&i| i >= size) {
                Some(&bad) => Err(Error::Data(format!(
                    "out-of-vocabulary {what} id {bad} (vocabulary size {size})"
                ))),
                None => Ok(()),
            }
        };
        check("user", &self.users, config.n_users)?;
        check("item", &self.items, config.n_items)?;
        check("category", &self.categories, config.n_categories)?;
        check("history item", &self.hist_items, config.n_items)?;
        check("history category", &self.hist_categories, config.n_categories)
    }
}

/// Accumulates samples with ragged histories, then pads them into a [`Batch`].
#[derive(Debug)]
pub struct BatchBuilder {
    max_history: usize,
    batch: Batch,
    offsets: Vec<usize>,
    flat_items: Vec<usize>,
    flat_cats: Vec<usize>,
}

impl BatchBuilder {
    pub fn new(max_history: usize) -> Self {
        Self {
            max_history,
            batch: Batch::default(),
            offsets: vec![0],
            flat_items: Vec::new(),
            flat_cats: Vec::new(),
        }
    }

    /// Histories longer than `max_history` keep their most recent entries.
    pub fn push(
        &mut self,
        user: usize,
        item: usize,
        category: usize,
        history_items: &[usize],
        history_categories: &[usize],
        label: f64,
    ) {
        debug_assert_eq!(history_items.len(), history_categories.len());
        let skip = history_items.len().saturating_sub(self.max_history);
        self.batch.users.push(user);
        self.batch.items.push(item);
        self.batch.categories.push(category);
        self.batch.labels.push(label);
        self.flat_items.extend_from_slice(&history_items[skip..]);
        self.flat_cats.extend_from_slice(&history_categories[skip..]);
        self.offsets.push(self.flat_items.len());
    }

    pub fn len(&self) -> usize {
        self.batch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batch.is_empty()
    }

    pub fn build(mut self) -> Batch {
        let lens: Vec<usize> = self.offsets.windows(2).map(|w| w[1] - w[0]).collect();
        let width = lens.iter().copied().max().unwrap_or(0).max(1);
        let n = lens.len();
        let mut items = vec![0; n * width];
        let mut cats = vec![0; n * width];
        for (r, w) in self.offsets.windows(2).enumerate() {
            let len = w[1] - w[0];
            items[r * width..r * width + len].copy_from_slice(&self.flat_items[w[0]..w[1]]);
            cats[r * width..r * width + len].copy_from_slice(&self.flat_cats[w[0]..w[1]]);
        }
        self.batch.hist_items = items;
        self.batch.hist_categories = cats;
        self.batch.hist_len = lens;
        self.batch.width = width;
        self.batch
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pads_and_truncates() {
        let mut b = BatchBuilder::new(2);
        b.push(0, 1, 0, &[5, 6, 7], &[1, 1, 2], 1.0);
        b.push(1, 2, 1, &[], &[], 0.0);
        let batch = b.build();
        assert_eq!(batch.width, 2);
        assert_eq!(batch.hist_len, vec![2, 0]);
        assert_eq!(batch.hist_items, vec![6, 7, 0, 0]);
        assert_eq!(batch.hist_categories, vec![1, 2, 0, 0]);
    }

    #[test]
    fn out_of_vocabulary_rejected() {
        let cfg = BackboneConfig::new(2, 3, 1);
        let s = Sample {
            device: 0,
            item: 3,
            category: 0,
            history_items: vec![],
            history_categories: vec![],
            label: 1.0,
        };
        let err = Batch::from_samples(&[s], 50).validate(&cfg).unwrap_err();
        assert!(err.to_string().contains("item id 3"));
    }
}
