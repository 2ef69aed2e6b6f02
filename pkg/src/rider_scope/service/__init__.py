from .app import LeaseTable, ServiceSettings, create_app

__all__ = ["LeaseTable", "ServiceSettings", "create_app"]
