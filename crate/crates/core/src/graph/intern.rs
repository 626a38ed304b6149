use std::collections::HashMap;

/// Hash-based IP → node index table. Indices follow first appearance, so no
/// sort over the address set is needed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeInterner {
    index: HashMap<Box<str>, u32>,
    ips: Vec<Box<str>>,
}

impl NodeInterner {
    pub fn with_capacity(cap: usize) -> Self {
        NodeInterner {
            index: HashMap::with_capacity(cap),
            ips: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn intern(&mut self, ip: &str) -> u32 {
        if let Some(&i) = self.index.get(ip) {
            return i;
        }
        let i = self.ips.len() as u32;
        let key: Box<str> = ip.into();
        self.index.insert(key.clone(), i);
        self.ips.push(key);
        i
    }

    pub fn get(&self, ip: &str) -> Option<u32> {
        self.index.get(ip).copied()
    }

    pub fn ip(&self, index: u32) -> &str {
        &self.ips[index as usize]
    }

    pub fn len(&self) -> usize {
        self.ips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ips.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.ips.iter().enumerate().map(|(i, s)| (&**s, i as u32))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_appearance_order() {
        let mut t = NodeInterner::default();
        assert_eq!(t.intern("10.0.0.9"), 0);
        assert_eq!(t.intern("10.0.0.1"), 1);
        assert_eq!(t.intern("10.0.0.9"), 0);
        assert_eq!(t.len(), 2);
        assert_eq!(t.ip(1), "10.0.0.1");
        assert_eq!(t.get("10.0.0.2"), None);
    }
}
