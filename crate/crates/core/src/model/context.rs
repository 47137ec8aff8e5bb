use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use crate::error::{Error, Result};
use crate::model::transformer::Model;
use crate::numerics::Tensor;

/// PLM document representations, computed once per document and shared by
/// every sentence in it.
pub struct DocumentCache<'m> {
    model: &'m Model,
    layer: usize,
    map: RwLock<HashMap<String, Arc<Tensor>>>,
}

impl<'m> DocumentCache<'m> {
    /// `model` must carry a PLM; `layer` selects the fused layer output.
    pub fn new(model: &'m Model, layer: usize) -> Result<Self> {
        let pc = model
            .config
            .plm
            .as_ref()
            .ok_or_else(|| Error::Config("document context needs a PLM".into()))?;
        if layer > pc.layers {
            return Err(Error::Config(format!("PLM layer {layer} beyond depth {}", pc.layers)));
        }
        Ok(DocumentCache { model, layer, map: RwLock::new(HashMap::new()) })
    }

    /// Context of document `id` with tokens `ids` (CLS is added here).
    pub fn get(&self, id: &str, ids: &[usize]) -> Result<Arc<Tensor>> {
        if let Some(t) = self.map.read().expect("cache lock").get(id) {
            return Ok(Arc::clone(t));
        }
        let max = self.model.config.plm.as_ref().map_or(0, |p| p.max_positions);
        if ids.len() + 1 > max {
            return Err(Error::Chunk { len: ids.len() + 1, max });
        }
        let h = Arc::new(self.model.encode_plm(ids, self.layer)?);
        let mut map = self.map.write().expect("cache lock");
        Ok(Arc::clone(map.entry(id.to_string()).or_insert(h)))
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
