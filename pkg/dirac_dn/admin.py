from django.contrib import admin
from .models import ExperimentRun, ResidualRecord


class ResidualInline(admin.TabularInline):
    model = ResidualRecord
    extra = 0
    readonly_fields = ['name', 'value', 'tolerance', 'passed', 'grid']


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ['short_id', 'subcommand', 'status', 'seed', 'exit_code',
                    'failed_checks', 'created_at']
    list_filter = ['status', 'subcommand', 'created_at']
    search_fields = ['id', 'subcommand', 'output_dir']
    readonly_fields = ['id', 'short_id', 'created_at', 'finished_at', 'config_text']
    ordering = ['-created_at']
    inlines = [ResidualInline]


@admin.register(ResidualRecord)
class ResidualRecordAdmin(admin.ModelAdmin):
    list_display = ['name', 'run', 'value', 'tolerance', 'passed', 'grid']
    list_filter = ['passed', 'name']
    search_fields = ['name', 'run__subcommand']
    readonly_fields = ['created_at']
