use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use modwatch::data::io::file_hash;
use modwatch::Result;

/// Output directory that remembers every file written through it.
pub struct OutDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn sub(&self, name: &str) -> Result<OutDir> {
        OutDir::create(&self.root.join(name))
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        let p = self.root.join(name);
        self.written.push(p.clone());
        p
    }

    pub fn file(&mut self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.path(name))?))
    }

    pub fn text(&mut self, name: &str, content: &str) -> Result<()> {
        std::fs::write(self.path(name), content)?;
        Ok(())
    }

    pub fn absorb(&mut self, child: OutDir) {
        self.written.extend(child.written);
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// `MANIFEST` with one `<sha256>  <relative path>` line per artifact.
    pub fn write_manifest(&mut self) -> Result<()> {
        let mut files = self.written.clone();
        files.sort();
        files.dedup();
        let mut lines = String::new();
        for f in files {
            let rel = f.strip_prefix(&self.root).unwrap_or(&f);
            lines.push_str(&format!("{}  {}\n", file_hash(&f)?, rel.display()));
        }
        std::fs::write(self.root.join("MANIFEST"), lines)?;
        Ok(())
    }
}
