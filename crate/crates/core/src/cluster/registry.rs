use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("no free port at or above {base} on host {host}")]
    PortsExhausted { host: String, base: u16 },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct HostEntry {
    ports: BTreeSet<u16>,
    handles: BTreeSet<String>,
    volumes: BTreeSet<String>,
}

impl HostEntry {
    fn is_empty(&self) -> bool {
        self.ports.is_empty() && self.handles.is_empty() && self.volumes.is_empty()
    }
}

/// Per-host namespaces for forwarded ports, node handles (VM and container
/// ids) and mounted volumes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostRegistry {
    hosts: BTreeMap<String, HostEntry>,
}

impl HostRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Lowest free port at or above `base` on `host`, now reserved.
    pub fn allocate_ssh_forward(&mut self, host: &str, base: u16) -> Result<u16, RegistryError> {
        let entry = self.hosts.entry(host.to_string()).or_default();
        let port = (base..=u16::MAX)
            .find(|p| !entry.ports.contains(p))
            .ok_or_else(|| RegistryError::PortsExhausted { host: host.to_string(), base })?;
        entry.ports.insert(port);
        Ok(port)
    }

    pub fn release_port(&mut self, host: &str, port: u16) {
        if let Some(e) = self.hosts.get_mut(host) {
            e.ports.remove(&port);
        }
    }

    pub fn register_handle(&mut self, host: &str, handle: &str) {
        self.hosts.entry(host.to_string()).or_default().handles.insert(handle.to_string());
    }

    pub fn release_handle(&mut self, host: &str, handle: &str) {
        if let Some(e) = self.hosts.get_mut(host) {
            e.handles.remove(handle);
        }
    }

    pub fn mount_volume(&mut self, host: &str, volume: &str) {
        self.hosts.entry(host.to_string()).or_default().volumes.insert(volume.to_string());
    }

    pub fn unmount_volume(&mut self, host: &str, volume: &str) {
        if let Some(e) = self.hosts.get_mut(host) {
            e.volumes.remove(volume);
        }
    }

    pub fn ports(&self, host: &str) -> Vec<u16> {
        self.hosts.get(host).map(|e| e.ports.iter().copied().collect()).unwrap_or_default()
    }

    pub fn handles(&self, host: &str) -> Vec<String> {
        self.hosts.get(host).map(|e| e.handles.iter().cloned().collect()).unwrap_or_default()
    }

    pub fn volumes(&self, host: &str) -> Vec<String> {
        self.hosts.get(host).map(|e| e.volumes.iter().cloned().collect()).unwrap_or_default()
    }

    /// Drops everything registered on `host`.
    pub fn clear_host(&mut self, host: &str) {
        self.hosts.remove(host);
    }

    pub fn is_empty(&self) -> bool {
        self.hosts.values().all(HostEntry::is_empty)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ports_are_per_host_and_lowest_free() {
        let mut r = HostRegistry::new();
        assert_eq!(r.allocate_ssh_forward("h1", 10022).unwrap(), 10022);
        assert_eq!(r.allocate_ssh_forward("h1", 10022).unwrap(), 10023);
        assert_eq!(r.allocate_ssh_forward("h2", 10022).unwrap(), 10022);
        r.release_port("h1", 10022);
        assert_eq!(r.allocate_ssh_forward("h1", 10022).unwrap(), 10022);
    }

    #[test]
    fn exhaustion() {
        let mut r = HostRegistry::new();
        assert_eq!(r.allocate_ssh_forward("h", u16::MAX).unwrap(), u16::MAX);
        assert!(matches!(r.allocate_ssh_forward("h", u16::MAX), Err(RegistryError::PortsExhausted { .. })));
    }

    #[test]
    fn empty_after_clear() {
        let mut r = HostRegistry::new();
        r.allocate_ssh_forward("h", 2000).unwrap();
        r.register_handle("h", "vm-0");
        r.mount_volume("h", "data");
        assert!(!r.is_empty());
        r.clear_host("h");
        assert!(r.is_empty());
    }
}
