//! Globally unique document identifiers.

/// A document identifier: a 16-bit partition number plus a 48-bit local
/// sequence assigned densely from 0 in ingestion order within the partition.
///
/// Ordering compares the local sequence before the partition. Under
/// round-robin partitioning this ranks documents by their original record
/// index no matter how many partitions the corpus was split into, which is
/// what makes tie-breaks agree across topologies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DocId {
    partition: u16,
    local: u64,
}

pub const LOCAL_ID_BITS: u32 = 48;
pub const MAX_LOCAL_ID: u64 = (1 << LOCAL_ID_BITS) - 1;

impl DocId {
    /// Panics if `local` does not fit in 48 bits.
    pub fn new(partition: u16, local: u64) -> Self {
        assert!(local <= MAX_LOCAL_ID, "local id {local} exceeds 48 bits");
        Self { partition, local }
    }

    pub fn partition(self) -> u16 {
        self.partition
    }

    pub fn local(self) -> u64 {
        self.local
    }

    /// Wire form: partition in the top 16 bits, local sequence below.
    pub fn to_u64(self) -> u64 {
        (u64::from(self.partition) << LOCAL_ID_BITS) | self.local
    }

    pub fn from_u64(raw: u64) -> Self {
        Self {
            partition: (raw >> LOCAL_ID_BITS) as u16,
            local: raw & MAX_LOCAL_ID,
        }
    }

    /// The record index this document had in the unpartitioned corpus,
    /// assuming round-robin assignment over `partitions` partitions.
    pub fn global_index(self, partitions: u16) -> u64 {
        self.local * u64::from(partitions.max(1)) + u64::from(self.partition)
    }
}

impl Ord for DocId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.local, self.partition).cmp(&(other.local, other.partition))
    }
}

impl PartialOrd for DocId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl std::fmt::Display for DocId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.partition, self.local)
    }
}
