fn main() -> std::process::ExitCode {
    sandbox_rollout::cli::main()
}
