use std::collections::VecDeque;

/// Per-layer FIFO of recent (key, value) token rows visible while encoding.
///
/// Keys are stored unrotated; positions are assigned relative to the
/// oldest retained row at attention time.
#[derive(Debug, Clone)]
pub struct LocalWindow {
    capacity: usize,
    kv_dim: usize,
    layers: Vec<WindowLayer>,
}

#[derive(Debug, Clone, Default)]
struct WindowLayer {
    keys: VecDeque<Vec<f32>>,
    values: VecDeque<Vec<f32>>,
    stream_pos: VecDeque<u64>,
}

impl LocalWindow {
    pub fn new(layers: usize, capacity: usize, kv_dim: usize) -> Self {
        Self { capacity, kv_dim, layers: vec![WindowLayer::default(); layers] }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn kv_dim(&self) -> usize {
        self.kv_dim
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn len(&self, layer: usize) -> usize {
        self.layers[layer].keys.len()
    }

    pub fn is_empty(&self, layer: usize) -> bool {
        self.layers[layer].keys.is_empty()
    }

    pub fn keys(&self, layer: usize) -> impl Iterator<Item = &[f32]> {
        self.layers[layer].keys.iter().map(Vec::as_slice)
    }

    pub fn values(&self, layer: usize) -> impl Iterator<Item = &[f32]> {
        self.layers[layer].values.iter().map(Vec::as_slice)
    }

    pub fn stream_positions(&self, layer: usize) -> impl Iterator<Item = u64> + '_ {
        self.layers[layer].stream_pos.iter().copied()
    }

    /// Appends one token row, evicting the oldest rows beyond capacity.
    pub fn push(&mut self, layer: usize, key: &[f32], value: &[f32], stream_pos: u64) {
        debug_assert_eq!(key.len(), self.kv_dim);
        let l = &mut self.layers[layer];
        l.keys.push_back(key.to_vec());
        l.values.push_back(value.to_vec());
        l.stream_pos.push_back(stream_pos);
        while l.keys.len() > self.capacity {
            l.keys.pop_front();
            l.values.pop_front();
            l.stream_pos.pop_front();
        }
    }
}
