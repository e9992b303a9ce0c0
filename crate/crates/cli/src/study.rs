use std::fs;
use std::sync::Arc;

use anyhow::{Context, Result};

use ptkit_core::metrics::reports_from_tsv;
use ptkit_listensvc::http::router;
use ptkit_listensvc::report::build_report;
use ptkit_listensvc::service::CreateStudy;
use ptkit_listensvc::{StudyExport, StudyService};

use crate::output::{require_dir, require_file, Outputs};
use crate::{ReportArgs, ServeArgs};

pub fn serve(a: &ServeArgs) -> Result<()> {
    if let Some(d) = &a.audio_dir {
        require_dir(d, "audio directory")?;
    }
    if let Some(d) = &a.static_dir {
        require_dir(d, "static directory")?;
    }
    let create: Option<CreateStudy> = match &a.create {
        Some(p) => {
            require_file(p, "study definition")?;
            let text = fs::read_to_string(p)?;
            Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?)
        }
        None => None,
    };
    let svc = StudyService::open(&a.journal, a.audio_dir.clone())?;
    if let Some(req) = create {
        match svc.create_study(req) {
            Ok(id) => log::info!("created study {id}"),
            Err(e) if e.code() == "duplicate_study" => log::info!("{e}; keeping the journaled study"),
            Err(e) => return Err(e.into()),
        }
    }
    let app = router(Arc::new(svc), a.static_dir.clone());
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(a.addr)
            .await
            .with_context(|| format!("binding {}", a.addr))?;
        log::info!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

pub fn report(a: &ReportArgs) -> Result<()> {
    require_file(&a.export, "study export")?;
    let export = StudyExport::from_json(&fs::read_to_string(&a.export)?)?;
    let metrics = match &a.metrics {
        Some(p) => {
            require_file(p, "metric report")?;
            let text = fs::read_to_string(p)?;
            Some(reports_from_tsv(&text).map_err(anyhow::Error::msg).with_context(|| format!("parsing {}", p.display()))?)
        }
        None => None,
    };
    let tables = build_report(&export, metrics.as_deref(), a.alpha);
    match &a.out_dir {
        Some(dir) => {
            let mut outputs = Outputs::new();
            outputs.dir(dir)?;
            for t in &tables {
                outputs.write(&dir.join(t.file_name(a.format)), t.render(a.format).as_bytes())?;
            }
            for p in outputs.commit() {
                println!("{}", p.display());
            }
        }
        None => {
            for t in &tables {
                println!("# {}", t.name);
                print!("{}", t.render(a.format));
            }
        }
    }
    Ok(())
}
