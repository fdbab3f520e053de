"""Wires the modules into one running orchestrator."""

from __future__ import annotations

import logging
from pathlib import Path

from .authz import AuthzService, Credential, Role, TrustConfig, mint_token
from .clock import Clock, SystemClock, VirtualClock
from .config import GateConfig
from .deploy import DeployConfig, DeployService
from .errors import ConfigInvalid
from .harness import Fleet, load_fleet
from .ledger import Ledger
from .repo import Repository
from .tags import TagService, TagStore
from .watch import WatchService

logger = logging.getLogger(__name__)

_SERVICE_SUBJECT = "svc:orchestrator"
_SERVICE_TOKEN_TTL_MS = 10 * 365 * 24 * 3600 * 1000


class Orchestrator:
    """Owns every subsystem and the single clock they share."""

    def __init__(self, config: GateConfig, clock: Clock | None = None) -> None:
        self.config = config
        if clock is not None:
            self.clock = clock
        else:
            self.clock = VirtualClock() if config.clock == "virtual" else SystemClock()

        key_path = Path(config.trust_key_file)
        try:
            key = key_path.read_bytes().strip()
        except OSError as exc:
            raise ConfigInvalid(f"cannot read trust key {key_path}: {exc}") from exc
        self.trust = TrustConfig(
            key=key, known_vos=frozenset(config.known_vos), dteam_write=config.dteam_write
        )
        self.authz = AuthzService(self.trust, self.clock)

        state = Path(config.state_dir)
        self.ledger = Ledger(
            state / "ledger",
            clock=self.clock,
            escalation_threshold=config.max_retries,
            fsync=config.ledger_fsync,
        )
        self.repository = Repository(config.repo_root)
        self.mirror = Repository(config.mirror_root) if config.mirror_root else None
        if config.fleet_file:
            self.fleet = load_fleet(config.fleet_file, state / "sites", self.clock)
        else:
            self.fleet = Fleet(state / "sites", self.clock)
        self.tag_store = TagStore(state / "tags")
        for site_id in self.fleet.site_ids():
            self.tag_store.register_site(site_id)
        self.tags = TagService(self.tag_store, self.authz)

        self.service_credential = self._service_credential()
        deploy_config = DeployConfig(
            max_retries=config.max_retries,
            validation_jobs=config.validation_jobs,
            backoff_base_ms=config.backoff_base_ms,
            vo=config.vo,
        )
        self.deploy = DeployService(
            repository=self.repository,
            mirror=self.mirror,
            fleet=self.fleet,
            tags=self.tags,
            authz=self.authz,
            ledger=self.ledger,
            clock=self.clock,
            service_credential=self.service_credential,
            config=deploy_config,
        )
        self.watch = WatchService(
            fleet=self.fleet,
            repository=self.repository,
            tag_store=self.tag_store,
            ledger=self.ledger,
            deploy=self.deploy,
            authz=self.authz,
            clock=self.clock,
            history_dir=state / "history",
            service_credential=self.service_credential,
            vo=config.vo,
        )
        logger.info(
            "orchestrator up: %d sites, repository generation %d, ledger sequence %d",
            len(self.fleet.site_ids()),
            self.repository.generation,
            self.ledger.sequence,
        )

    def _service_credential(self) -> Credential:
        token = mint_token(
            self.trust.key,
            _SERVICE_SUBJECT,
            self.config.vo,
            Role.ESM,
            self.clock.now_ms() + _SERVICE_TOKEN_TTL_MS,
        )
        return self.authz.authenticate(token)

    def mint_token(self, subject: str, role: Role | str, ttl_ms: int = 3_600_000) -> str:
        """Convenience minting against this orchestrator's trust key."""
        return mint_token(
            self.trust.key, subject, self.config.vo, role, self.clock.now_ms() + ttl_ms
        )

    def close(self) -> None:
        self.ledger.close()
