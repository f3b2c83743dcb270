use super::config::FusionConfig;
use crate::error::{Error, Result};
use crate::params::{join, Initializer, Parameters};
use crate::real::Real;
use crate::tensor::Mat;

/// Every learnable tensor of the token-embedding path.
///
/// All tensors exist for every fusion kind; parameters off the active path
/// simply receive zero gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingParams<T> {
    /// `F × d`, row `f` is `e_f`.
    pub feature_table: Mat<T>,
    /// Projector hidden weights `H × 1` and bias `1 × H`.
    pub proj_w1: Mat<T>,
    pub proj_b1: Mat<T>,
    /// Projector output weights `d' × H` and bias `1 × d'`.
    pub proj_w2: Mat<T>,
    pub proj_b2: Mat<T>,
    /// Feature-conditioned affine, `F × d'` each.
    pub gamma: Mat<T>,
    pub beta: Mat<T>,
    /// Per-feature class tables `C_f × d_c`; `None` for numeric features.
    pub cat_tables: Vec<Option<Mat<T>>>,
    /// `d × (d + d_c)`.
    pub w_cat: Mat<T>,
    /// `d × (d + d')`, used only by the concat arm.
    pub concat_proj: Mat<T>,
}

impl<T: Real> EmbeddingParams<T> {
    /// `categories[f]` is `C_f` for categorical features and 0 for numeric.
    pub fn init(cfg: &FusionConfig, categories: &[usize], init: &Initializer) -> Self {
        let (d, dp, h, dc) = (cfg.d, cfg.d_prime, cfg.projector_hidden, cfg.d_c);
        let f = categories.len();
        let table_bound = 1.0 / (d as f64).sqrt();
        EmbeddingParams {
            feature_table: init.uniform("embedding.feature_table", f, d, table_bound),
            proj_w1: init.fan_in("embedding.proj_w1", h, 1, 1),
            proj_b1: init.fan_in("embedding.proj_b1", 1, h, 1),
            proj_w2: init.fan_in("embedding.proj_w2", dp, h, h),
            proj_b2: init.fan_in("embedding.proj_b2", 1, dp, h),
            gamma: Mat::filled(f, dp, T::one()),
            beta: Mat::zeros(f, dp),
            cat_tables: categories
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    (c > 0).then(|| {
                        init.uniform(&format!("embedding.cat_table.{i}"), c, dc, table_bound)
                    })
                })
                .collect(),
            w_cat: init.fan_in("embedding.w_cat", d, d + dc, d + dc),
            concat_proj: init.fan_in("embedding.concat_proj", d, d + dp, d + dp),
        }
    }

    pub fn zeros_like(&self) -> Self {
        EmbeddingParams {
            feature_table: self.feature_table.zeros_like(),
            proj_w1: self.proj_w1.zeros_like(),
            proj_b1: self.proj_b1.zeros_like(),
            proj_w2: self.proj_w2.zeros_like(),
            proj_b2: self.proj_b2.zeros_like(),
            gamma: self.gamma.zeros_like(),
            beta: self.beta.zeros_like(),
            cat_tables: self
                .cat_tables
                .iter()
                .map(|t| t.as_ref().map(Mat::zeros_like))
                .collect(),
            w_cat: self.w_cat.zeros_like(),
            concat_proj: self.concat_proj.zeros_like(),
        }
    }

    pub fn n_features(&self) -> usize {
        self.feature_table.rows()
    }

    pub fn d(&self) -> usize {
        self.feature_table.cols()
    }

    pub fn d_prime(&self) -> usize {
        self.gamma.cols()
    }

    pub(crate) fn check_feature(&self, f: usize) -> Result<()> {
        if f >= self.n_features() {
            return Err(Error::Index {
                what: "feature",
                index: f,
                size: self.n_features(),
            });
        }
        Ok(())
    }

    pub(crate) fn cat_table(&self, f: usize) -> Result<&Mat<T>> {
        self.check_feature(f)?;
        self.cat_tables[f]
            .as_ref()
            .ok_or_else(|| Error::Schema(format!("feature {f} is not categorical")))
    }
}

impl<T: Real> Parameters<T> for EmbeddingParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Mat<T>)) {
        f(&join(prefix, "feature_table"), &self.feature_table);
        f(&join(prefix, "proj_w1"), &self.proj_w1);
        f(&join(prefix, "proj_b1"), &self.proj_b1);
        f(&join(prefix, "proj_w2"), &self.proj_w2);
        f(&join(prefix, "proj_b2"), &self.proj_b2);
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
        for (i, t) in self.cat_tables.iter().enumerate() {
            if let Some(t) = t {
                f(&join(prefix, &format!("cat_table.{i}")), t);
            }
        }
        f(&join(prefix, "w_cat"), &self.w_cat);
        f(&join(prefix, "concat_proj"), &self.concat_proj);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(&str, &'a mut Mat<T>)) {
        f(&join(prefix, "feature_table"), &mut self.feature_table);
        f(&join(prefix, "proj_w1"), &mut self.proj_w1);
        f(&join(prefix, "proj_b1"), &mut self.proj_b1);
        f(&join(prefix, "proj_w2"), &mut self.proj_w2);
        f(&join(prefix, "proj_b2"), &mut self.proj_b2);
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
        for (i, t) in self.cat_tables.iter_mut().enumerate() {
            if let Some(t) = t {
                f(&join(prefix, &format!("cat_table.{i}")), t);
            }
        }
        f(&join(prefix, "w_cat"), &mut self.w_cat);
        f(&join(prefix, "concat_proj"), &mut self.concat_proj);
    }
}
