//! Base image recipe. Offline steps are baked into a reusable image;
//! anything that depends on the deployment target runs from the boot-time
//! script instead.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::{Backend, BackendError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "step", content = "packages", rename_all = "snake_case")]
pub enum ProvisionStep {
    CreateUserAccounts,
    ConfigureNetworkInterfaces,
    ConfigureSsh,
    InstallPackages(Vec<String>),
    ConfigureProxy,
    ConfigureSharedStorage,
}

impl ProvisionStep {
    pub const KINDS: [&'static str; 6] = [
        "create_user_accounts",
        "configure_network_interfaces",
        "configure_ssh",
        "install_packages",
        "configure_proxy",
        "configure_shared_storage",
    ];

    pub fn kind(&self) -> &'static str {
        match self {
            ProvisionStep::CreateUserAccounts => "create_user_accounts",
            ProvisionStep::ConfigureNetworkInterfaces => "configure_network_interfaces",
            ProvisionStep::ConfigureSsh => "configure_ssh",
            ProvisionStep::InstallPackages(_) => "install_packages",
            ProvisionStep::ConfigureProxy => "configure_proxy",
            ProvisionStep::ConfigureSharedStorage => "configure_shared_storage",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecipeError {
    #[error("step {0} appears more than once")]
    Duplicate(&'static str),
    #[error("step {0} is missing")]
    Missing(&'static str),
    #[error("network interfaces can only be configured at boot time")]
    NetworkAtBuildTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecipe {
    pub steps: Vec<ProvisionStep>,
    pub boot_time_script: Vec<ProvisionStep>,
}

impl Default for ImageRecipe {
    fn default() -> Self {
        Self {
            steps: vec![
                ProvisionStep::CreateUserAccounts,
                ProvisionStep::ConfigureSsh,
                ProvisionStep::InstallPackages(vec!["openmpi".into(), "docker".into(), "nfs-utils".into()]),
                ProvisionStep::ConfigureProxy,
                ProvisionStep::ConfigureSharedStorage,
            ],
            boot_time_script: vec![ProvisionStep::ConfigureNetworkInterfaces],
        }
    }
}

impl ImageRecipe {
    pub fn validate(&self) -> Result<(), RecipeError> {
        let mut seen: BTreeMap<&'static str, usize> = BTreeMap::new();
        for s in self.steps.iter().chain(&self.boot_time_script) {
            *seen.entry(s.kind()).or_default() += 1;
        }
        for kind in ProvisionStep::KINDS {
            match seen.get(kind) {
                None => return Err(RecipeError::Missing(kind)),
                Some(&c) if c > 1 => return Err(RecipeError::Duplicate(kind)),
                _ => {}
            }
        }
        if self.steps.contains(&ProvisionStep::ConfigureNetworkInterfaces) {
            return Err(RecipeError::NetworkAtBuildTime);
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("recipe serializes")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildLogEntry {
    pub step: String,
    /// 1 = baked into the image, 2 = deferred to boot.
    pub phase: u8,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuiltImage {
    pub image_id: String,
    pub digest: String,
    pub log: Vec<BuildLogEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ImageError {
    #[error(transparent)]
    Recipe(#[from] RecipeError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Applies the offline steps on `backend` and returns the reusable image.
/// Image content depends only on the recipe.
pub fn build_image(recipe: &ImageRecipe, backend: &mut dyn Backend) -> Result<BuiltImage, ImageError> {
    recipe.validate()?;
    let mut log = Vec::with_capacity(ProvisionStep::KINDS.len());
    for step in &recipe.steps {
        let seconds = backend.image_step(step)?;
        log.push(BuildLogEntry { step: step.kind().to_string(), phase: 1, seconds });
    }
    for step in &recipe.boot_time_script {
        log.push(BuildLogEntry { step: step.kind().to_string(), phase: 2, seconds: 0.0 });
    }
    let digest = recipe.digest();
    Ok(BuiltImage { image_id: format!("bee-base-{}", &digest[..12]), digest, log })
}
