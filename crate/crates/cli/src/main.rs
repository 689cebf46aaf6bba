use clap::Parser;

fn main() {
    let cli = dintr_cli::Cli::parse();
    std::process::exit(dintr_cli::run(cli));
}
