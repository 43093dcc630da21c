use clap::{Parser, Subcommand};
use colo_cli::commands::{ablate, evaluate, gen_data, generate, gradcheck, train};
use colo_cli::Result;

#[derive(Parser)]
#[command(name = "colo", version, about = "Contrastive comparative-relation generation runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and lexicon.
    GenData(gen_data::GenDataArgs),
    /// Train a model on a corpus.
    Train(train::TrainArgs),
    /// Decode descriptions for a file of tuples.
    Generate(generate::GenerateArgs),
    /// Score a checkpoint or a predictions file on a corpus split.
    Evaluate(evaluate::EvaluateArgs),
    /// Train and evaluate every ablation arm across seeds.
    Ablate(ablate::AblateArgs),
    /// Finite-difference check of every differentiable op and loss.
    Gradcheck(gradcheck::GradcheckArgs),
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData(a) => {
            let (dir, _) = gen_data::run(a)?;
            println!("corpus written to {}", dir.display());
        }
        Command::Train(a) => {
            let out = train::run(a)?;
            println!("trained {} steps; checkpoint in {}", out.state.step, out.dir.display());
        }
        Command::Generate(a) => {
            let (dir, _) = generate::run(a)?;
            println!("predictions written to {}", dir.display());
        }
        Command::Evaluate(a) => {
            let (dir, report, _) = evaluate::run(a)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            println!("report written to {}", dir.display());
        }
        Command::Ablate(a) => {
            let out = ablate::run(a)?;
            println!("ablation results in {}", out.dir.display());
        }
        Command::Gradcheck(a) => {
            let outcomes = gradcheck::run(a)?;
            println!("all {} checks passed", outcomes.len());
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
